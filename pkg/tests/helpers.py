"""Shared test fixtures: a generic linear plant and an independent
finite-horizon Riccati recursion used as the LQR oracle."""

import numpy as np

from neural_ilqr import Trajectory


class LinearPlant:
    """x' = A x + B u through the engine's generic (non-kernel) path."""

    def __init__(self, A, B, dt=1.0, kind="linear"):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        self.n = self.A.shape[0]
        self.m = self.B.shape[1]
        self.dt = dt
        self.kind = kind
        self.angle_index = 0

    def step(self, x, u):
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)

    def rollout(self, x0, actions):
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, self.m)
        xs = np.zeros((actions.shape[0] + 1, self.n))
        xs[0] = x0
        for t in range(actions.shape[0]):
            xs[t + 1] = self.step(xs[t], actions[t])
        return Trajectory(states=xs, actions=actions)

    def jacobians_fd(self, x, u, eps=1e-5):
        return self.A.copy(), self.B.copy()


def riccati_recursion(A, B, Q, R, QT, horizon):
    """Finite-horizon discrete-time Riccati for cost
    sum_t x'Qx + u'Ru + x_T' QT x_T (no 1/2 factors).
    Returns per-step feedback gains (time-forward order) and P_0."""
    P = QT.copy()
    gains = []
    for _ in range(horizon):
        H = R + B.T @ P @ B
        K = -np.linalg.solve(H, B.T @ P @ A)
        closed = A + B @ K
        P = Q + K.T @ R @ K + closed.T @ P @ closed
        gains.append(K)
    return gains[::-1], P


def riccati_optimal_cost(A, B, Q, R, QT, x0, horizon):
    _, P0 = riccati_recursion(A, B, Q, R, QT, horizon)
    return float(x0 @ P0 @ x0)


def random_lqr_instance(rng, n_max=4, m_max=4, horizon_max=20, stable_scale=0.6):
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, min(m_max, n) + 1))
    A = rng.normal(0.0, stable_scale, (n, n))
    B = rng.normal(0.0, stable_scale, (n, m))
    qh = rng.normal(0.0, 1.0, (n, n))
    Q = qh @ qh.T / n + 1e-3 * np.eye(n)
    rh = rng.normal(0.0, 1.0, (m, m))
    R = rh @ rh.T / m + 0.1 * np.eye(m)
    QT = 3.0 * Q
    horizon = int(rng.integers(3, horizon_max + 1))
    x0 = rng.normal(0.0, 1.0, n)
    return A, B, 0.5 * (Q + Q.T), 0.5 * (R + R.T), 0.5 * (QT + QT.T), x0, horizon
