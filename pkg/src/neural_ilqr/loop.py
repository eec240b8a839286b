"""Closed-loop learned-dynamics iLQR orchestration.

One run: bootstrap a dataset with random trials and pretrain the network,
then iterate (linearize through the network -> smooth the Jacobian schedules
-> backward pass -> line-searched rollout through the real plant). When an
iteration's objective decrease falls under the retraining tolerance the
executed trajectory joins the dataset and the network is retrained
(warm-started); when the line search exhausts its schedule the action
sequence is jittered with Gaussian noise, the jittered rollout joins the
dataset, and training continues - the jittered trajectory replaces the
nominal only if it actually improves the objective. The plant's analytic
parameters are never consulted.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import costs, data, network
from .data import Dataset, TAG_PERTURBED, TAG_ROLLOUT
from .ilqr import (IterationRecord, RegularizationFailure, SolverSettings,
                   Trajectory, backward_pass, line_search)
from .network import FilterConfig, NetworkParams, NetworkSpec, TrainSettings


@dataclass(frozen=True)
class LoopSettings:
    solver: SolverSettings = field(default_factory=SolverSettings)
    pretrain: TrainSettings = field(default_factory=TrainSettings)
    retrain: TrainSettings = field(default_factory=lambda: TrainSettings(epochs=20))
    filter: FilterConfig = field(default_factory=FilterConfig)
    trials: int = 100
    action_scale: tuple = (10.0,)
    noise_std: tuple = None          # None -> 10% of action_scale
    retrain_tol: float = 1e-3        # relative objective decrease
    max_outer: int = 500
    plateau_limit: int = 30          # None -> run to max_outer regardless
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1 or self.max_outer < 1:
            raise ValueError("trials and max_outer must be positive")
        if self.retrain_tol <= 0:
            raise ValueError("retrain_tol must be positive")
        object.__setattr__(self, "action_scale", tuple(np.atleast_1d(self.action_scale).tolist()))
        if self.noise_std is not None:
            noise = tuple(np.atleast_1d(self.noise_std).tolist())
            if any(s < 0 for s in noise):
                raise ValueError("noise_std must be nonnegative")
            object.__setattr__(self, "noise_std", noise)
        if self.plateau_limit is not None and self.plateau_limit < 1:
            raise ValueError("plateau_limit must be positive when set")

    def resolved_noise_std(self, m: int) -> np.ndarray:
        if self.noise_std is None:
            return 0.1 * np.broadcast_to(np.asarray(self.action_scale), (m,)).astype(np.float64)
        return np.broadcast_to(np.asarray(self.noise_std), (m,)).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "solver": self.solver.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "retrain": self.retrain.to_dict(),
            "filter": self.filter.to_dict(),
            "trials": self.trials,
            "action_scale": list(self.action_scale),
            "noise_std": None if self.noise_std is None else list(self.noise_std),
            "retrain_tol": self.retrain_tol,
            "max_outer": self.max_outer,
            "plateau_limit": self.plateau_limit,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "LoopSettings":
        return LoopSettings(
            solver=SolverSettings(**d["solver"]),
            pretrain=TrainSettings(**d["pretrain"]),
            retrain=TrainSettings(**d["retrain"]),
            filter=FilterConfig(**d["filter"]),
            trials=d["trials"],
            action_scale=tuple(d["action_scale"]),
            noise_std=None if d.get("noise_std") is None else tuple(d["noise_std"]),
            retrain_tol=d["retrain_tol"],
            max_outer=d["max_outer"],
            plateau_limit=d["plateau_limit"],
            seed=d["seed"],
        )


@dataclass
class RunMetrics:
    """Per-run summary: objectives[0] is the initial nominal cost and
    objectives[i] the cost after outer iteration i; first_min_iteration is
    the first index attaining the curve's minimum."""

    objectives: np.ndarray
    events: list
    first_min_iteration: int
    final_cost: float
    theta_error: float
    status: str
    success: bool = None
    deviation: float = None
    pretrain_time: float = 0.0
    solve_time: float = 0.0


@dataclass
class NeuralSolveReport:
    metrics: RunMetrics
    trajectory: Trajectory
    model: NetworkParams
    dataset: Dataset
    records: list = field(default_factory=list)
    train_logs: list = field(default_factory=list)


@dataclass
class IterationOutcome:
    accepted: bool
    trajectory: Trajectory = None
    cost: float = np.inf
    alpha: float = 0.0
    mu: float = 0.0
    stall_reason: str = ""


def _derived_seed(seed_seq) -> int:
    return int(seed_seq.generate_state(1)[0])


def pretrain(plant, x0, horizon: int, net_spec: NetworkSpec, loop: LoopSettings):
    """Collect the random-trial dataset and fit the network to it. Returns
    (params, dataset, train_log)."""
    ss = np.random.SeedSequence(loop.seed)
    data_child, train_child = ss.spawn(2)
    ds = data.collect_random_trials(
        plant, x0, loop.trials, horizon, np.asarray(loop.action_scale),
        seed=_derived_seed(data_child))
    params = network.init_network(net_spec)
    settings = replace(loop.pretrain, seed=_derived_seed(train_child))
    params, log = network.train(params, ds, settings)
    return params, ds, log


def escape_perturbation(actions, noise_std, seed) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise per action entry; deterministic
    per seed (accepts an int seed or a Generator)."""
    actions = np.asarray(actions, dtype=np.float64)
    noise_std = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), actions.shape[-1:])
    if (noise_std < 0).any():
        raise ValueError("noise_std must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return actions + rng.normal(0.0, 1.0, size=actions.shape) * noise_std


def neural_iteration(plant, model: NetworkParams, nominal: Trajectory,
                     nominal_cost: float, spec, loop: LoopSettings,
                     mu: float = None) -> IterationOutcome:
    """One outer iteration: network linearization, Gaussian smoothing,
    backward pass, and a line-searched rollout through the real plant."""
    mu = loop.solver.mu_init if mu is None else mu
    lin = network.linearize_trajectory(model, nominal)
    lin = network.smooth_jacobians(lin, loop.filter)
    stage, terminal = costs.expand_trajectory(nominal, spec)
    try:
        bp = backward_pass(lin, stage, terminal, mu, mu_max=loop.solver.mu_max,
                           mu_growth=loop.solver.mu_growth)
    except RegularizationFailure:
        return IterationOutcome(accepted=False, mu=loop.solver.mu_max,
                                stall_reason="regularization-failed")
    result = line_search(plant, nominal, nominal_cost, bp.gains, spec, loop.solver)
    if not result.accepted:
        return IterationOutcome(accepted=False, mu=bp.mu, stall_reason="line-search-exhausted")
    return IterationOutcome(accepted=True, trajectory=result.trajectory,
                            cost=result.cost, alpha=result.alpha, mu=bp.mu)


def _angle_mse(traj: Trajectory, plant, spec) -> float:
    idx = plant.angle_index
    err = traj.states[:, idx] - spec.reference[idx]
    return float(np.mean(err * err))


def solve_neural_ilqr(plant, spec, x0, net_spec: NetworkSpec, loop: LoopSettings,
                      horizon: int) -> NeuralSolveReport:
    """Full run from random trials to a converged trajectory; the executing
    plant is only ever sampled, never differentiated."""
    started = time.perf_counter()
    x0 = np.asarray(x0, dtype=np.float64)
    pre_started = time.perf_counter()
    model, ds, pre_log = pretrain(plant, x0, horizon, net_spec, loop)
    pretrain_time = time.perf_counter() - pre_started

    ss = np.random.SeedSequence((loop.seed, 1))
    perturb_rng = np.random.default_rng(_derived_seed(ss.spawn(1)[0]))
    noise_std = loop.resolved_noise_std(plant.m)

    nominal = plant.rollout(x0, np.zeros((horizon, plant.m)))
    nominal_cost = costs.total_cost(nominal, spec)
    objectives = [nominal_cost]
    events = []
    records = []
    train_logs = [pre_log]
    mu = loop.solver.mu_init
    plateau = 0
    status = "max-outer"

    def retrain(tag_log: bool = True):
        settings = replace(loop.retrain, seed=_derived_seed(ss.spawn(1)[0]))
        new_model, log = network.train(model, ds, settings)
        if tag_log:
            train_logs.append(log)
        return new_model, log

    for it in range(1, loop.max_outer + 1):
        outcome = neural_iteration(plant, model, nominal, nominal_cost, spec, loop, mu)
        if outcome.accepted:
            decrease = nominal_cost - outcome.cost
            rel_decrease = decrease / max(abs(nominal_cost), 1e-12)
            nominal, nominal_cost = outcome.trajectory, outcome.cost
            mu = max(loop.solver.mu_min, outcome.mu * loop.solver.mu_decay)
            if rel_decrease < loop.retrain_tol:
                data.append_trajectory(ds, nominal, TAG_ROLLOUT)
                model, _ = retrain()
                event = "retrain"
                plateau += 1
            else:
                event = "accepted"
                plateau = 0
            records.append(IterationRecord(it, nominal_cost, outcome.alpha, outcome.mu, event))
        else:
            perturbed = escape_perturbation(nominal.actions, noise_std, perturb_rng)
            try:
                ptraj = plant.rollout(x0, perturbed)
            except Exception:
                ptraj = None
            if ptraj is not None:
                data.append_trajectory(ds, ptraj, TAG_PERTURBED)
                model, _ = retrain()
                pcost = costs.total_cost(ptraj, spec)
                if pcost < nominal_cost:
                    nominal, nominal_cost = ptraj, pcost
                    plateau = 0
                else:
                    plateau += 1
            else:
                plateau += 1
            mu = loop.solver.mu_init
            event = "perturb"
            records.append(IterationRecord(it, nominal_cost, 0.0, outcome.mu, event))
        objectives.append(nominal_cost)
        events.append(event)
        if loop.plateau_limit is not None and plateau >= loop.plateau_limit:
            status = "plateau"
            break

    curve = np.asarray(objectives)
    metrics = RunMetrics(
        objectives=curve,
        events=events,
        first_min_iteration=int(np.argmin(curve)),
        final_cost=nominal_cost,
        theta_error=_angle_mse(nominal, plant, spec),
        status=status,
        pretrain_time=pretrain_time,
        solve_time=time.perf_counter() - started,
    )
    return NeuralSolveReport(metrics=metrics, trajectory=nominal, model=model,
                             dataset=ds, records=records, train_logs=train_logs)
