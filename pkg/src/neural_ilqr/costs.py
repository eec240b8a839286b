"""Quadratic stage and terminal costs with exact expansions.

Stage cost is (x - r)' Q (x - r) + u' R u at every timestep. The mode tag
picks the terminal term: "tracking" reuses Q against the same reference (the
state penalty effectively runs one step past the last action), while
"regulation-terminal" applies a dedicated terminal weight. No 1/2 factors
anywhere; expansions carry the resulting 2s.
"""

from dataclasses import dataclass, field

import numpy as np

MODE_TRACKING = "tracking"
MODE_REGULATION = "regulation-terminal"

_SYM_TOL = 1e-12


class CostDimensionError(ValueError):
    """Cost inputs whose shapes do not match the spec."""


def _check_symmetric(name, mat):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise CostDimensionError(f"{name} must be square, got {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > _SYM_TOL:
        raise ValueError(f"{name} is not symmetric to {_SYM_TOL}")


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    Q_terminal: np.ndarray
    reference: np.ndarray
    mode: str = MODE_REGULATION

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=np.float64))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "Q_terminal", np.asarray(self.Q_terminal, dtype=np.float64))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=np.float64))
        _check_symmetric("Q", self.Q)
        _check_symmetric("R", self.R)
        _check_symmetric("Q_terminal", self.Q_terminal)
        if self.mode not in (MODE_TRACKING, MODE_REGULATION):
            raise ValueError(f"unknown cost mode {self.mode!r}")
        n = self.Q.shape[0]
        if self.Q_terminal.shape[0] != n or self.reference.shape != (n,):
            raise CostDimensionError("Q, Q_terminal and reference disagree on state dimension")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def terminal_weight(self) -> np.ndarray:
        return self.Q if self.mode == MODE_TRACKING else self.Q_terminal

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Q_terminal": self.Q_terminal.tolist(),
            "reference": self.reference.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "CostSpec":
        return CostSpec(Q=np.array(d["Q"]), R=np.array(d["R"]),
                        Q_terminal=np.array(d["Q_terminal"]),
                        reference=np.array(d["reference"]), mode=d["mode"])


@dataclass
class CostExpansion:
    """First and second derivatives of a stage (or terminal) cost."""

    jx: np.ndarray
    ju: np.ndarray
    jxx: np.ndarray
    juu: np.ndarray
    jux: np.ndarray


@dataclass
class CostExpansionSchedule:
    """Stacked stage expansions over a horizon, timestep-major."""

    jx: np.ndarray   # (T, n)
    ju: np.ndarray   # (T, m)
    jxx: np.ndarray  # (T, n, n)
    juu: np.ndarray  # (T, m, m)
    jux: np.ndarray  # (T, m, n)


def _check_dims(spec: CostSpec, x=None, u=None):
    if x is not None and np.shape(x) != (spec.n,):
        raise CostDimensionError(f"state must have shape ({spec.n},), got {np.shape(x)}")
    if u is not None and np.shape(u) != (spec.m,):
        raise CostDimensionError(f"action must have shape ({spec.m},), got {np.shape(u)}")


def stage_cost(x, u, spec: CostSpec) -> float:
    _check_dims(spec, x, u)
    dx = np.asarray(x, dtype=np.float64) - spec.reference
    u = np.asarray(u, dtype=np.float64)
    return float(dx @ spec.Q @ dx + u @ spec.R @ u)


def terminal_cost(x, spec: CostSpec) -> float:
    _check_dims(spec, x)
    dx = np.asarray(x, dtype=np.float64) - spec.reference
    w = spec.terminal_weight
    return float(dx @ w @ dx)


def total_cost(traj, spec: CostSpec) -> float:
    """Stage costs over all actions plus the mode's terminal term."""
    xs, us = traj.states, traj.actions
    if xs.shape[0] != us.shape[0] + 1:
        raise CostDimensionError(
            f"trajectory lengths inconsistent: {xs.shape[0]} states, {us.shape[0]} actions")
    if xs.shape[1] != spec.n or (us.size and us.shape[1] != spec.m):
        raise CostDimensionError("trajectory dimensions do not match the cost spec")
    dx = xs[:-1] - spec.reference
    stage = np.einsum("ti,ij,tj->", dx, spec.Q, dx) + np.einsum("ti,ij,tj->", us, spec.R, us)
    return float(stage + terminal_cost(xs[-1], spec))


def cost_expansion(x, u, spec: CostSpec, terminal: bool = False) -> CostExpansion:
    """Exact derivatives of the quadratic form; Hessians are constant and the
    cross term is zero."""
    _check_dims(spec, x, None if terminal else u)
    dx = np.asarray(x, dtype=np.float64) - spec.reference
    m = spec.m
    if terminal:
        w = spec.terminal_weight
        return CostExpansion(jx=2.0 * w @ dx, ju=np.zeros(m), jxx=2.0 * w,
                             juu=np.zeros((m, m)), jux=np.zeros((m, spec.n)))
    u = np.asarray(u, dtype=np.float64)
    return CostExpansion(jx=2.0 * spec.Q @ dx, ju=2.0 * spec.R @ u, jxx=2.0 * spec.Q,
                         juu=2.0 * spec.R, jux=np.zeros((m, spec.n)))


def expand_trajectory(traj, spec: CostSpec):
    """Stage expansions along a trajectory plus the terminal expansion."""
    xs, us = traj.states, traj.actions
    horizon = us.shape[0]
    n, m = spec.n, spec.m
    dx = xs[:-1] - spec.reference
    sched = CostExpansionSchedule(
        jx=2.0 * dx @ spec.Q.T,
        ju=2.0 * us @ spec.R.T,
        jxx=np.broadcast_to(2.0 * spec.Q, (horizon, n, n)).copy(),
        juu=np.broadcast_to(2.0 * spec.R, (horizon, m, m)).copy(),
        jux=np.zeros((horizon, m, n)),
    )
    return sched, cost_expansion(xs[-1], None, spec, terminal=True)
