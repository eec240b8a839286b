"""Simulated plants: cartpole swing-up rig and kinematic bicycle vehicle.

Both integrate fixed-step continuous dynamics (cartpole: semi-implicit Euler,
vehicle: forward Euler) and play the role of the real system everywhere:
data collection, line-search rollouts, and evaluation. Model inaccuracy is
injected by scaling named physical parameters, producing a second plant whose
derivatives no longer match the executing one.
"""

from dataclasses import dataclass, replace, fields

import numpy as np

from . import kernels


class PlantError(ValueError):
    """Bad plant input: dimension mismatch or non-finite values."""


class RolloutDiverged(RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, timestep: int):
        super().__init__(f"non-finite state at timestep {timestep}")
        self.timestep = timestep


@dataclass(frozen=True)
class InaccuracySpec:
    """Fractional parameter mismatch: each named parameter is scaled by
    (1 + fraction). fraction = 0 is the identity."""

    fraction: float = 0.0
    parameters: tuple = ("pole_mass", "pole_half_length")

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError(f"fraction must be in [0, 1), got {self.fraction}")


class Plant:
    """Shared plant behavior; concrete plants define n, m, kind and the
    kernel dispatch code."""

    n: int
    m: int
    kind: str
    scheme: str
    angle_index: int
    _code: int
    dt: float

    def kernel_params(self) -> np.ndarray:
        raise NotImplementedError

    def _check_inputs(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if x.shape != (self.n,):
            raise PlantError(f"state must have shape ({self.n},), got {x.shape}")
        if u.shape != (self.m,):
            raise PlantError(f"action must have shape ({self.m},), got {u.shape}")
        if not np.isfinite(x).all() or not np.isfinite(u).all():
            raise PlantError("non-finite state or action")
        return x, u

    def step(self, x, u) -> np.ndarray:
        """Advance one dt step."""
        x, u = self._check_inputs(x, u)
        return kernels.plant_step(self._code, self.kernel_params(), x, u)

    def rollout(self, x0, actions):
        """Feed an open-loop action sequence through the plant."""
        from .ilqr import Trajectory

        x0 = np.asarray(x0, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, self.m)
        if x0.shape != (self.n,):
            raise PlantError(f"x0 must have shape ({self.n},), got {x0.shape}")
        xs, bad_t = kernels.open_loop_rollout(self._code, self.kernel_params(), x0, actions)
        if bad_t >= 0:
            raise RolloutDiverged(bad_t)
        return Trajectory(states=xs, actions=actions.copy())

    def jacobians_fd(self, x, u, eps: float = 1e-5):
        """Central-difference Jacobians of step with respect to x and u."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        x, u = self._check_inputs(x, u)
        par = self.kernel_params()
        a = np.empty((self.n, self.n))
        b = np.empty((self.n, self.m))
        for j in range(self.n):
            dx = np.zeros(self.n)
            dx[j] = eps
            hi = kernels.plant_step(self._code, par, x + dx, u)
            lo = kernels.plant_step(self._code, par, x - dx, u)
            a[:, j] = (hi - lo) / (2.0 * eps)
        for j in range(self.m):
            du = np.zeros(self.m)
            du[j] = eps
            hi = kernels.plant_step(self._code, par, x, u + du)
            lo = kernels.plant_step(self._code, par, x, u - du)
            b[:, j] = (hi - lo) / (2.0 * eps)
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise PlantError("non-finite dynamics evaluation in finite differencing")
        return a, b

    def perturbed(self, spec: InaccuracySpec):
        return perturb_params(self, spec)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update({f.name: getattr(self, f.name) for f in fields(self)})
        return d


@dataclass(frozen=True)
class CartpolePlant(Plant):
    """Frictionless cart-pole; theta = 0 is the upright pole, growing as it
    leans in +x. State [theta, omega, cart pos, cart vel], action [horizontal
    force on the cart]."""

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    dt: float = 0.02

    n = 4
    m = 1
    kind = "cartpole"
    scheme = "semi-implicit-euler"
    angle_index = 0
    _code = kernels.CARTPOLE_CODE

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name in ("cart_mass", "pole_mass", "pole_half_length", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def kernel_params(self) -> np.ndarray:
        return np.array([self.cart_mass, self.pole_mass, self.pole_half_length,
                         self.gravity, self.dt])

    def energy(self, x) -> float:
        """Mechanical energy (uniform-rod pole), conserved under zero force."""
        theta, omega, _, vel = np.asarray(x, dtype=np.float64)
        m, l = self.pole_mass, self.pole_half_length
        com_sq = vel * vel + 2.0 * l * omega * vel * np.cos(theta) + l * l * omega * omega
        kinetic = 0.5 * self.cart_mass * vel * vel + 0.5 * m * com_sq + 0.5 * (m * l * l / 3.0) * omega * omega
        potential = m * self.gravity * l * np.cos(theta)
        return kinetic + potential


@dataclass(frozen=True)
class BicyclePlant(Plant):
    """Kinematic bicycle with the rear axle as reference point. State
    [px, py, heading, speed], action [steer angle, acceleration]."""

    wheelbase: float = 2.5
    dt: float = 0.02

    n = 4
    m = 2
    kind = "vehicle"
    scheme = "forward-euler"
    angle_index = 2
    _code = kernels.BICYCLE_CODE

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def kernel_params(self) -> np.ndarray:
        return np.array([self.wheelbase, self.dt])


PLANT_KINDS = {"cartpole": CartpolePlant, "vehicle": BicyclePlant}


def plant_from_dict(d: dict):
    """Inverse of Plant.to_dict."""
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in PLANT_KINDS:
        raise ValueError(f"unknown plant kind {kind!r}")
    return PLANT_KINDS[kind](**d)


def perturb_params(plant: Plant, spec: InaccuracySpec) -> Plant:
    """Scale the named parameters by (1 + fraction); deterministic, and the
    identity at fraction 0."""
    updates = {}
    for name in spec.parameters:
        if not hasattr(plant, name) or name in ("dt", "kind", "scheme"):
            raise ValueError(f"plant {plant.kind!r} has no perturbable parameter {name!r}")
        updates[name] = getattr(plant, name) * (1.0 + spec.fraction)
    return replace(plant, **updates)
