"""Transition-sample store: random-trial bootstrapping, online appends of
executed trajectories, and a line-oriented text persistence format.

File format: one header line ``n,m,plant-tag,seed`` followed by one line per
sample ``tag, x[0..n), u[0..m), x_next[0..n)`` with full-precision decimal
floats, UTF-8, LF line endings.
"""

import numpy as np

from .plants import RolloutDiverged

TAG_RANDOM = "random-trial"
TAG_ROLLOUT = "ilqr-rollout"
TAG_PERTURBED = "perturbed-rollout"
_TAGS = (TAG_RANDOM, TAG_ROLLOUT, TAG_PERTURBED)


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


class Dataset:
    """Append-only ordered collection of (x, u, x_next) samples sharing one
    plant's dimensions; each sample carries a provenance tag."""

    def __init__(self, n: int, m: int, plant_tag: str = "", seed: int = 0,
                 trials: int = None, trial_horizon: int = None):
        self.n = int(n)
        self.m = int(m)
        self.plant_tag = plant_tag
        self.seed = int(seed)
        self.trials = trials
        self.trial_horizon = trial_horizon
        self._x = []
        self._u = []
        self._x_next = []
        self._tags = []

    def __len__(self) -> int:
        return len(self._x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.n, self.m, self.plant_tag, self.seed, len(self)) != \
                (other.n, other.m, other.plant_tag, other.seed, len(other)):
            return False
        if self._tags != other._tags:
            return False
        a = self.as_arrays()
        b = other.as_arrays()
        return all(np.array_equal(p, q) for p, q in zip(a, b))

    @property
    def tags(self) -> list:
        return list(self._tags)

    def add(self, x, u, x_next, tag: str):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        x_next = np.asarray(x_next, dtype=np.float64)
        if x.shape != (self.n,) or x_next.shape != (self.n,) or u.shape != (self.m,):
            raise ValueError(
                f"sample dimensions {x.shape}/{u.shape}/{x_next.shape} do not match "
                f"(n={self.n}, m={self.m})")
        if tag not in _TAGS:
            raise ValueError(f"unknown provenance tag {tag!r}")
        self._x.append(x)
        self._u.append(u)
        self._x_next.append(x_next)
        self._tags.append(tag)

    def as_arrays(self):
        """Samples as stacked (x, u, x_next) float64 arrays."""
        if not self._x:
            return (np.zeros((0, self.n)), np.zeros((0, self.m)), np.zeros((0, self.n)))
        return (np.vstack(self._x), np.vstack(self._u), np.vstack(self._x_next))


def collect_random_trials(plant, x0, trials: int, horizon: int, action_scale,
                          seed: int = 0, max_retries: int = 20) -> Dataset:
    """Bootstrap a dataset with open-loop rollouts under i.i.d. uniform
    actions in [-scale, +scale] per dimension. A diverging trial is discarded
    and redrawn (bounded retries); deterministic per seed."""
    if trials < 1 or horizon < 1:
        raise ValueError("trials and horizon must be at least 1")
    scale = np.broadcast_to(np.asarray(action_scale, dtype=np.float64), (plant.m,))
    if (scale <= 0).any():
        raise ValueError("action scale must be positive per dimension")
    x0 = np.asarray(x0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    ds = Dataset(plant.n, plant.m, plant_tag=plant.kind, seed=seed,
                 trials=trials, trial_horizon=horizon)
    for _ in range(trials):
        for attempt in range(max_retries + 1):
            actions = rng.uniform(-scale, scale, size=(horizon, plant.m))
            try:
                traj = plant.rollout(x0, actions)
            except RolloutDiverged:
                continue
            break
        else:
            raise RolloutDiverged(-1)
        for t in range(horizon):
            ds.add(traj.states[t], traj.actions[t], traj.states[t + 1], TAG_RANDOM)
    return ds


def append_trajectory(ds: Dataset, traj, tag: str) -> Dataset:
    """Append a trajectory's transitions in order; returns the dataset."""
    if traj.states.shape[1] != ds.n or (traj.horizon and traj.actions.shape[1] != ds.m):
        raise ValueError("trajectory dimensions do not match the dataset")
    for t in range(traj.horizon):
        ds.add(traj.states[t], traj.actions[t], traj.states[t + 1], tag)
    return ds


def save(ds: Dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{ds.n},{ds.m},{ds.plant_tag},{ds.seed}\n")
        x, u, x_next = ds.as_arrays()
        for i in range(len(ds)):
            nums = [repr(float(v)) for v in (*x[i], *u[i], *x_next[i])]
            fh.write(",".join([ds._tags[i], *nums]) + "\n")


def load(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(",")
        if len(parts) != 4:
            raise DatasetFormatError(f"malformed header {header!r}")
        try:
            n, m = int(parts[0]), int(parts[1])
            seed = int(parts[3])
        except ValueError:
            raise DatasetFormatError(f"malformed header {header!r}") from None
        if n < 1 or m < 1:
            raise DatasetFormatError(f"nonpositive dimensions in header {header!r}")
        ds = Dataset(n, m, plant_tag=parts[2], seed=seed)
        width = 1 + 2 * n + m
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise DatasetFormatError(
                    f"line {lineno}: expected {width} fields, got {len(cells)}")
            tag = cells[0]
            if tag not in _TAGS:
                raise DatasetFormatError(f"line {lineno}: unknown tag {tag!r}")
            try:
                vals = np.array([float(c) for c in cells[1:]])
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: non-numeric field") from None
            ds.add(vals[:n], vals[n:n + m], vals[n + m:], tag)
    return ds
