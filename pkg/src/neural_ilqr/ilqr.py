"""Model-agnostic iLQR engine.

The backward pass consumes a per-timestep linearization schedule (whoever
produced it: finite differences of a plant or a trained network), the forward
pass rolls the gain-perturbed policy through the real system, and the solver
loop alternates the two with a backtracking line search and adaptive
regularization. The same engine drives the true-model baseline and the
learned-dynamics variant.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import costs, kernels
from .costs import CostExpansion, CostExpansionSchedule, CostSpec
from .plants import RolloutDiverged


class RegularizationFailure(RuntimeError):
    """Control Hessian stayed indefinite at the regularization ceiling."""


@dataclass
class Trajectory:
    """States (T+1, n) paired with actions (T, m)."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-d arrays")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError(
                f"need T+1 states for T actions, got {self.states.shape[0]} and {self.actions.shape[0]}")
        if not np.isfinite(self.states).all() or not np.isfinite(self.actions).all():
            raise ValueError("non-finite trajectory entries")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.actions.copy())


@dataclass
class LinearizationSchedule:
    """Per-timestep dynamics Jacobians: fx (T, n, n), fu (T, n, m)."""

    fx: np.ndarray
    fu: np.ndarray

    def __post_init__(self):
        self.fx = np.asarray(self.fx, dtype=np.float64)
        self.fu = np.asarray(self.fu, dtype=np.float64)
        if self.fx.shape[0] != self.fu.shape[0]:
            raise ValueError("fx and fu disagree on horizon")
        if not np.isfinite(self.fx).all() or not np.isfinite(self.fu).all():
            raise ValueError("non-finite Jacobian entries")

    @property
    def horizon(self) -> int:
        return self.fx.shape[0]


@dataclass
class GainSchedule:
    """Feedforward k (T, m) and feedback K (T, m, n)."""

    k: np.ndarray
    K: np.ndarray

    @property
    def horizon(self) -> int:
        return self.k.shape[0]

    @staticmethod
    def zeros(horizon: int, n: int, m: int) -> "GainSchedule":
        return GainSchedule(k=np.zeros((horizon, m)), K=np.zeros((horizon, m, n)))


@dataclass
class ValueExpansion:
    """Quadratic value-function model at one timestep."""

    vx: np.ndarray
    vxx: np.ndarray


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 100
    alpha_init: float = 1.0
    alpha_ratio: float = 0.5
    line_search_steps: int = 10
    mu_init: float = 1e-6
    mu_min: float = 1e-9
    mu_max: float = 1e6
    mu_growth: float = 10.0
    mu_decay: float = 0.5
    tolerance: float = 1e-4

    def __post_init__(self):
        if min(self.max_iterations, self.alpha_init, self.line_search_steps,
               self.mu_init, self.mu_min, self.mu_max, self.mu_growth,
               self.tolerance) <= 0:
            raise ValueError("solver settings must be positive")
        if not 0.0 < self.alpha_ratio < 1.0:
            raise ValueError("alpha_ratio must lie in (0, 1) for a decreasing schedule")

    @property
    def alphas(self) -> np.ndarray:
        return self.alpha_init * self.alpha_ratio ** np.arange(self.line_search_steps)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "max_iterations", "alpha_init", "alpha_ratio", "line_search_steps",
            "mu_init", "mu_min", "mu_max", "mu_growth", "mu_decay", "tolerance")}


@dataclass
class BackwardPassResult:
    gains: GainSchedule
    predicted_decrease: float
    mu: float


def backward_pass(lin: LinearizationSchedule, stage: CostExpansionSchedule,
                  terminal: CostExpansion, mu: float = 0.0,
                  mu_max: float = 1e6, mu_growth: float = 10.0) -> BackwardPassResult:
    """Gain recursion from the terminal expansion back to t = 0.

    Escalates mu geometrically while the regularized control Hessian is not
    positive definite; raises RegularizationFailure past mu_max. The returned
    predicted decrease is the quadratic-model improvement at full step.
    """
    if stage.jx.shape[0] != lin.horizon:
        raise ValueError("linearization and cost schedules disagree on horizon")
    current = mu
    while True:
        ks, big_ks, dv1, dv2, fail_t = kernels.lqr_backward(
            lin.fx, lin.fu, stage.jx, stage.ju, stage.jxx, stage.juu, stage.jux,
            terminal.jx, terminal.jxx, current)
        if fail_t < 0:
            if not (np.isfinite(ks).all() and np.isfinite(big_ks).all()):
                raise FloatingPointError("non-finite gains in backward pass")
            return BackwardPassResult(GainSchedule(k=ks, K=big_ks),
                                      predicted_decrease=-(dv1 + dv2), mu=current)
        current = mu_growth * max(current, 1e-9)
        if current > mu_max:
            raise RegularizationFailure(
                f"control Hessian not positive definite at timestep {fail_t} with mu={mu_max:g}")


def forward_pass(dynamics, nominal: Trajectory, gains: GainSchedule, alpha: float) -> Trajectory:
    """Closed-loop rollout of u = u_nom + alpha k + K (x - x_nom) through the
    real system. ``dynamics`` is a plant (fast kernel path) or anything with a
    ``step(x, u)`` method."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if gains.horizon != nominal.horizon:
        raise ValueError("gain schedule and trajectory disagree on horizon")
    if hasattr(dynamics, "kernel_params"):
        xs, us, bad_t = kernels.closed_loop_rollout(
            dynamics._code, dynamics.kernel_params(), nominal.states,
            nominal.actions, gains.k, gains.K, alpha)
        if bad_t >= 0:
            raise RolloutDiverged(bad_t)
        return Trajectory(states=xs, actions=us)
    horizon = nominal.horizon
    xs = np.zeros_like(nominal.states)
    us = np.zeros_like(nominal.actions)
    xs[0] = nominal.states[0]
    for t in range(horizon):
        dx = xs[t] - nominal.states[t]
        us[t] = nominal.actions[t] + alpha * gains.k[t] + gains.K[t] @ dx
        xs[t + 1] = dynamics.step(xs[t], us[t])
        if not np.isfinite(xs[t + 1]).all():
            raise RolloutDiverged(t)
    return Trajectory(states=xs, actions=us)


@dataclass
class LineSearchResult:
    accepted: bool
    trajectory: Trajectory = None
    cost: float = np.inf
    alpha: float = 0.0


def line_search(dynamics, nominal: Trajectory, nominal_cost: float,
                gains: GainSchedule, spec: CostSpec,
                settings: SolverSettings) -> LineSearchResult:
    """Backtrack over the step-size schedule; accept the first strict
    improvement, report a stall when the schedule is exhausted."""
    for alpha in settings.alphas:
        try:
            candidate = forward_pass(dynamics, nominal, gains, float(alpha))
        except (RolloutDiverged, ValueError):
            continue
        cost = costs.total_cost(candidate, spec)
        if np.isfinite(cost) and cost < nominal_cost:
            return LineSearchResult(accepted=True, trajectory=candidate,
                                    cost=cost, alpha=float(alpha))
    return LineSearchResult(accepted=False)


def linearize_with_fd(plant, traj: Trajectory, eps: float = 1e-5) -> LinearizationSchedule:
    """Finite-difference Jacobian schedule of a plant along a trajectory."""
    horizon = traj.horizon
    fx = np.empty((horizon, plant.n, plant.n))
    fu = np.empty((horizon, plant.n, plant.m))
    for t in range(horizon):
        fx[t], fu[t] = plant.jacobians_fd(traj.states[t], traj.actions[t], eps)
    return LinearizationSchedule(fx=fx, fu=fu)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    alpha: float
    mu: float
    event: str

    def as_row(self) -> dict:
        return {"iteration": self.iteration, "objective": self.objective,
                "alpha": self.alpha, "mu": self.mu, "event": self.event}


@dataclass
class SolveReport:
    trajectory: Trajectory
    objectives: list
    records: list = field(default_factory=list)
    status: str = "max-iterations"
    iterations: int = 0
    wall_time: float = 0.0

    @property
    def final_cost(self) -> float:
        return self.objectives[-1]


def solve_model_based(plant, spec: CostSpec, x0, settings: SolverSettings,
                      horizon: int = None, model_plant=None, u_init=None) -> SolveReport:
    """Conventional iLQR: derivatives from ``model_plant`` (default: the
    executing plant itself), rollouts always through the executing plant.
    Passing a mismatched model plant reproduces the wrong-derivatives failure
    mode studied in the robustness experiments.
    """
    started = time.perf_counter()
    model_plant = plant if model_plant is None else model_plant
    if u_init is None:
        if horizon is None:
            raise ValueError("either horizon or u_init is required")
        u_init = np.zeros((horizon, plant.m))
    nominal = plant.rollout(np.asarray(x0, dtype=np.float64), u_init)
    nominal_cost = costs.total_cost(nominal, spec)
    objectives = [nominal_cost]
    records = []
    mu = settings.mu_init
    status = "max-iterations"
    iterations = 0
    for it in range(1, settings.max_iterations + 1):
        iterations = it
        lin = linearize_with_fd(model_plant, nominal)
        stage, terminal = costs.expand_trajectory(nominal, spec)
        try:
            bp = backward_pass(lin, stage, terminal, mu, mu_max=settings.mu_max,
                               mu_growth=settings.mu_growth)
        except RegularizationFailure:
            status = "regularization-failed"
            records.append(IterationRecord(it, nominal_cost, 0.0, mu, "regularization-failed"))
            break
        result = line_search(plant, nominal, nominal_cost, bp.gains, spec, settings)
        if not result.accepted:
            mu = max(bp.mu, settings.mu_min) * settings.mu_growth
            records.append(IterationRecord(it, nominal_cost, 0.0, bp.mu, "stalled"))
            if mu > settings.mu_max:
                status = "stalled"
                break
            continue
        decrease = nominal_cost - result.cost
        nominal, nominal_cost = result.trajectory, result.cost
        objectives.append(nominal_cost)
        mu = max(settings.mu_min, bp.mu * settings.mu_decay)
        records.append(IterationRecord(it, nominal_cost, result.alpha, bp.mu, "accepted"))
        if decrease < settings.tolerance:
            status = "converged"
            break
    return SolveReport(trajectory=nominal, objectives=objectives, records=records,
                       status=status, iterations=iterations,
                       wall_time=time.perf_counter() - started)
