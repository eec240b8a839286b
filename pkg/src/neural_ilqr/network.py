"""Neural surrogate of the plant dynamics.

Three architectures fit (x, u) -> x_next on z-scored transition data: two
plain fully connected nets (small and large, three linear layers each) and a
residual net of four pre-activation blocks (batch norm + ReLU ahead of every
linear layer) plus a linear head. Input Jacobians come from an exact
forward-accumulation sweep through the frozen network, including the
normalization scalings, and can be smoothed along the trajectory time axis
with a truncated Gaussian kernel before they enter the backward pass.
Second derivatives are never formed.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import kernels
from .ilqr import LinearizationSchedule

ARCH_SMALL = "small-fcnn"
ARCH_LARGE = "large-fcnn"
ARCH_RESIDUAL = "residual"
ARCHITECTURES = (ARCH_SMALL, ARCH_LARGE, ARCH_RESIDUAL)

_ACT_CODES = {"relu": kernels.ACT_RELU, "tanh": kernels.ACT_TANH}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_MOMENTUM = 0.1

_SD_FLOOR = 1e-8


@dataclass(frozen=True)
class NetworkSpec:
    architecture: str
    state_dim: int
    action_dim: int
    activation: str = "relu"
    seed: int = 0
    residual_width: int = 256

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.architecture == ARCH_RESIDUAL and self.activation != "relu":
            raise ValueError("the residual architecture is defined with relu")
        if self.state_dim < 1 or self.action_dim < 1 or self.residual_width < 1:
            raise ValueError("dimensions must be positive")

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.action_dim

    @property
    def output_dim(self) -> int:
        return self.state_dim

    @property
    def fcnn_widths(self) -> np.ndarray:
        hidden = (128, 64) if self.architecture == ARCH_SMALL else (1024, 512)
        return np.array([self.input_dim, *hidden, self.output_dim], dtype=np.int64)

    def layer_shapes(self) -> list:
        """(fan_in, fan_out) of every linear layer, main path first."""
        if self.architecture == ARCH_RESIDUAL:
            w = self.residual_width
            return [(self.input_dim, w), (self.input_dim, w), (w, w), (w, w), (w, w),
                    (w, self.output_dim)]
        widths = self.fcnn_widths
        return [(int(widths[i]), int(widths[i + 1])) for i in range(len(widths) - 1)]

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "state_dim": self.state_dim,
                "action_dim": self.action_dim, "activation": self.activation,
                "seed": self.seed, "residual_width": self.residual_width}

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(**d)


def _res_layout(d_in: int, width: int, d_out: int):
    """Flat offsets of the residual net's trainable vector and running-stat
    vector: skip projection, then (gamma, beta, W, b) per block, then the
    head (gamma, beta, W, b)."""
    sizes = [d_in * width]
    for blk in range(4):
        d = d_in if blk == 0 else width
        sizes += [d, d, d * width, width]
    sizes += [width, width, width * d_out, d_out]
    offs = np.zeros(len(sizes) + 1, dtype=np.int64)
    offs[1:] = np.cumsum(sizes)
    stat_sizes = []
    for blk in range(4):
        d = d_in if blk == 0 else width
        stat_sizes += [d, d]
    stat_sizes += [width, width]
    soffs = np.zeros(len(stat_sizes) + 1, dtype=np.int64)
    soffs[1:] = np.cumsum(stat_sizes)
    return offs, soffs


@dataclass
class NormStats:
    """Frozen z-score statistics mapping raw transitions to network space."""

    mu_in: np.ndarray
    sd_in: np.ndarray
    mu_out: np.ndarray
    sd_out: np.ndarray

    @staticmethod
    def identity(d_in: int, d_out: int) -> "NormStats":
        return NormStats(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    @staticmethod
    def from_data(x: np.ndarray, y: np.ndarray) -> "NormStats":
        return NormStats(
            mu_in=x.mean(axis=0), sd_in=np.maximum(x.std(axis=0), _SD_FLOOR),
            mu_out=y.mean(axis=0), sd_out=np.maximum(y.std(axis=0), _SD_FLOOR))

    def copy(self) -> "NormStats":
        return NormStats(self.mu_in.copy(), self.sd_in.copy(),
                         self.mu_out.copy(), self.sd_out.copy())


@dataclass
class NetworkParams:
    """Flat trainable vector plus (for the residual net) running batch-norm
    statistics, and the data normalization the network was trained under."""

    spec: NetworkSpec
    theta: np.ndarray
    bn_stats: np.ndarray = None
    norm: NormStats = None

    def __post_init__(self):
        if self.norm is None:
            self.norm = NormStats.identity(self.spec.input_dim, self.spec.output_dim)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.theta.copy(),
                             None if self.bn_stats is None else self.bn_stats.copy(),
                             self.norm.copy())

    def save(self, path):
        meta = json.dumps(self.spec.to_dict())
        np.savez(path, meta=np.frombuffer(meta.encode(), dtype=np.uint8),
                 theta=self.theta,
                 bn_stats=np.zeros(0) if self.bn_stats is None else self.bn_stats,
                 mu_in=self.norm.mu_in, sd_in=self.norm.sd_in,
                 mu_out=self.norm.mu_out, sd_out=self.norm.sd_out)

    @staticmethod
    def load(path) -> "NetworkParams":
        with np.load(path) as data:
            spec = NetworkSpec.from_dict(json.loads(bytes(data["meta"]).decode()))
            bn = data["bn_stats"]
            return NetworkParams(
                spec=spec, theta=data["theta"].copy(),
                bn_stats=None if bn.size == 0 else bn.copy(),
                norm=NormStats(data["mu_in"].copy(), data["sd_in"].copy(),
                               data["mu_out"].copy(), data["sd_out"].copy()))


def init_network(spec: NetworkSpec) -> NetworkParams:
    """Seeded fan-in-scaled uniform weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(spec.seed)

    def uniform(fan_in, count):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=count)

    if spec.architecture == ARCH_RESIDUAL:
        d_in, w, d_out = spec.input_dim, spec.residual_width, spec.output_dim
        offs, soffs = _res_layout(d_in, w, d_out)
        theta = np.zeros(offs[-1])
        theta[offs[0]:offs[0] + d_in * w] = uniform(d_in, d_in * w)
        for blk in range(4):
            d = d_in if blk == 0 else w
            theta[offs[1 + 4 * blk]:offs[1 + 4 * blk] + d] = 1.0      # gamma
            theta[offs[3 + 4 * blk]:offs[3 + 4 * blk] + d * w] = uniform(d, d * w)
        theta[offs[17]:offs[17] + w] = 1.0
        theta[offs[19]:offs[19] + w * d_out] = uniform(w, w * d_out)
        stats = np.zeros(soffs[-1])
        for pair in range(5):
            lo = soffs[2 * pair + 1]
            hi = soffs[2 * pair + 2]
            stats[lo:hi] = 1.0                                        # running var
        return NetworkParams(spec=spec, theta=theta, bn_stats=stats)

    widths = spec.fcnn_widths
    pieces = []
    for i in range(3):
        fan_in, fan_out = int(widths[i]), int(widths[i + 1])
        pieces.append(uniform(fan_in, fan_in * fan_out))
        pieces.append(np.zeros(fan_out))
    return NetworkParams(spec=spec, theta=np.concatenate(pieces))


def _forward_normalized(params: NetworkParams, zn: np.ndarray) -> np.ndarray:
    spec = params.spec
    if spec.architecture == ARCH_RESIDUAL:
        offs, soffs = _res_layout(spec.input_dim, spec.residual_width, spec.output_dim)
        return kernels.res_forward_batch(params.theta, params.bn_stats, offs, soffs,
                                         spec.input_dim, spec.residual_width,
                                         spec.output_dim, zn)
    return kernels.mlp3_forward_batch(params.theta, spec.fcnn_widths,
                                      _ACT_CODES[spec.activation], zn)


def predict_batch(params: NetworkParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Next-state predictions for stacked (x, u) rows, inference mode."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    spec = params.spec
    if x.shape[1] != spec.state_dim or u.shape[1] != spec.action_dim or x.shape[0] != u.shape[0]:
        raise ValueError("prediction inputs do not match the network dimensions")
    z = np.hstack([x, u])
    zn = (z - params.norm.mu_in) / params.norm.sd_in
    return _forward_normalized(params, zn) * params.norm.sd_out + params.norm.mu_out


def predict(params: NetworkParams, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape != (params.spec.state_dim,) or u.shape != (params.spec.action_dim,):
        raise ValueError("prediction inputs do not match the network dimensions")
    return predict_batch(params, x[None, :], u[None, :])[0]


def _jacobian_normalized(params: NetworkParams, zn: np.ndarray) -> np.ndarray:
    spec = params.spec
    if spec.architecture == ARCH_RESIDUAL:
        offs, soffs = _res_layout(spec.input_dim, spec.residual_width, spec.output_dim)
        return kernels.res_jacobian_batch(params.theta, params.bn_stats, offs, soffs,
                                          spec.input_dim, spec.residual_width,
                                          spec.output_dim, zn)
    return kernels.mlp3_jacobian_batch(params.theta, spec.fcnn_widths,
                                       _ACT_CODES[spec.activation], zn)


def input_jacobians(params: NetworkParams, x, u):
    """Exact derivatives of predict with respect to x and u at one point,
    chained through the normalization scalings."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    spec = params.spec
    if x.shape != (spec.state_dim,) or u.shape != (spec.action_dim,):
        raise ValueError("jacobian inputs do not match the network dimensions")
    zn = ((np.concatenate([x, u]) - params.norm.mu_in) / params.norm.sd_in)[None, :]
    jac = _jacobian_normalized(params, zn)[0]
    jac = params.norm.sd_out[:, None] * jac / params.norm.sd_in[None, :]
    return jac[:, :spec.state_dim], jac[:, spec.state_dim:]


def linearize_trajectory(params: NetworkParams, traj) -> LinearizationSchedule:
    """Input Jacobians at every nominal (state, action) pair."""
    spec = params.spec
    n = spec.state_dim
    horizon = traj.horizon
    if horizon == 0:
        return LinearizationSchedule(fx=np.zeros((0, n, n)),
                                     fu=np.zeros((0, n, spec.action_dim)))
    z = np.hstack([traj.states[:-1], traj.actions])
    zn = (z - params.norm.mu_in) / params.norm.sd_in
    jac = _jacobian_normalized(params, zn)
    jac = params.norm.sd_out[None, :, None] * jac / params.norm.sd_in[None, None, :]
    return LinearizationSchedule(fx=np.ascontiguousarray(jac[:, :, :n]),
                                 fu=np.ascontiguousarray(jac[:, :, n:]))


@dataclass(frozen=True)
class FilterConfig:
    """Gaussian smoothing of Jacobian schedules along the time axis. sigma is
    in timesteps; the kernel is truncated at ``truncate`` sigmas (radius 4
    sigma by default) and normalized; boundaries reflect."""

    sigma: float = 5.0
    truncate: float = 4.0
    boundary_mode: str = "reflect"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.truncate <= 0:
            raise ValueError("truncate must be positive")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "truncate": self.truncate,
                "boundary_mode": self.boundary_mode}


def smooth_jacobians(sched: LinearizationSchedule, cfg: FilterConfig) -> LinearizationSchedule:
    """Convolve every scalar entry sequence over time with the normalized
    truncated Gaussian; sigma = 0 is the identity."""
    if cfg.sigma == 0.0 or sched.horizon < 2:
        return LinearizationSchedule(fx=sched.fx.copy(), fu=sched.fu.copy())
    smooth = lambda a: gaussian_filter1d(a, sigma=cfg.sigma, axis=0,
                                         mode=cfg.boundary_mode, truncate=cfg.truncate)
    return LinearizationSchedule(fx=smooth(sched.fx), fu=smooth(sched.fu))


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    validation_split: float = 0.1
    seed: int = 0
    patience: int = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size and learning rate must be positive")
        if not 0.0 < self.validation_split < 1.0:
            raise ValueError("validation_split must lie in (0, 1)")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive when set")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "epochs", "batch_size", "learning_rate", "optimizer",
            "validation_split", "seed", "patience")}


@dataclass
class TrainLog:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False
    wall_time: float = 0.0


def train(params: NetworkParams, dataset, settings: TrainSettings):
    """Minibatch Adam on the mean squared error of normalized next-state
    targets. Normalization statistics are (re)frozen from the training split
    on every call; training resumes from the passed parameters. Returns the
    best-validation-loss parameters and the per-epoch loss curves; a
    non-finite loss aborts with the best parameters so far.
    """
    started = time.perf_counter()
    x, u, x_next = dataset.as_arrays()
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    spec = params.spec
    if x.shape[1] != spec.state_dim or u.shape[1] != spec.action_dim:
        raise ValueError("dataset dimensions do not match the network")
    inputs = np.hstack([x, u])
    targets = x_next
    total = inputs.shape[0]
    rng = np.random.default_rng(settings.seed)
    perm = rng.permutation(total)
    n_val = int(round(settings.validation_split * total))
    n_val = min(n_val, total - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    norm = NormStats.from_data(inputs[train_idx], targets[train_idx])
    xn = (inputs - norm.mu_in) / norm.sd_in
    yn = (targets - norm.mu_out) / norm.sd_out
    x_train, y_train = np.ascontiguousarray(xn[train_idx]), np.ascontiguousarray(yn[train_idx])
    x_val, y_val = np.ascontiguousarray(xn[val_idx]), np.ascontiguousarray(yn[val_idx])

    work = params.copy()
    work.norm = norm
    adam_m = np.zeros_like(work.theta)
    adam_v = np.zeros_like(work.theta)
    step = 0
    log = TrainLog()
    best_theta = work.theta.copy()
    best_stats = None if work.bn_stats is None else work.bn_stats.copy()
    best_val = np.inf
    residual = spec.architecture == ARCH_RESIDUAL
    if residual:
        offs, soffs = _res_layout(spec.input_dim, spec.residual_width, spec.output_dim)
    for epoch in range(settings.epochs):
        order = rng.permutation(train_idx.size).astype(np.int64)
        if residual:
            loss, step = kernels.res_train_epoch(
                work.theta, work.bn_stats, adam_m, adam_v, step, offs, soffs,
                spec.input_dim, spec.residual_width, spec.output_dim,
                x_train, y_train, order, settings.batch_size,
                settings.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, BN_MOMENTUM)
        else:
            loss, step = kernels.mlp3_train_epoch(
                work.theta, adam_m, adam_v, step, spec.fcnn_widths,
                _ACT_CODES[spec.activation], x_train, y_train, order,
                settings.batch_size, settings.learning_rate,
                ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        if not np.isfinite(loss):
            log.diverged = True
            break
        log.train_losses.append(float(loss))
        if x_val.shape[0]:
            resid = _forward_normalized(work, x_val) - y_val
            val_loss = float(np.mean(resid * resid))
        else:
            val_loss = float(loss)
        log.val_losses.append(val_loss)
        if np.isfinite(val_loss) and val_loss < best_val:
            best_val = val_loss
            best_theta = work.theta.copy()
            best_stats = None if work.bn_stats is None else work.bn_stats.copy()
            log.best_epoch = epoch
        if settings.patience is not None and epoch - log.best_epoch >= settings.patience:
            break
    out = NetworkParams(spec=spec, theta=best_theta, bn_stats=best_stats, norm=norm)
    log.wall_time = time.perf_counter() - started
    return out, log
