import numpy as np
import pytest

from neural_ilqr import (CartpolePlant, CostExpansion, CostSpec, GainSchedule,
                         LinearizationSchedule, RegularizationFailure,
                         SolverSettings, Trajectory, backward_pass, forward_pass,
                         line_search, linearize_with_fd, solve_model_based,
                         total_cost)
from neural_ilqr.costs import CostExpansionSchedule, expand_trajectory

from helpers import LinearPlant, random_lqr_instance, riccati_optimal_cost, riccati_recursion


def _scalar_schedule(horizon, fx=1.0, fu=1.0, jx=0.0, ju=2.0, jxx=0.0, juu=2.0):
    lin = LinearizationSchedule(fx=np.full((horizon, 1, 1), fx),
                                fu=np.full((horizon, 1, 1), fu))
    stage = CostExpansionSchedule(jx=np.full((horizon, 1), jx),
                                  ju=np.full((horizon, 1), ju),
                                  jxx=np.full((horizon, 1, 1), jxx),
                                  juu=np.full((horizon, 1, 1), juu),
                                  jux=np.zeros((horizon, 1, 1)))
    terminal = CostExpansion(jx=np.zeros(1), ju=np.zeros(1), jxx=np.zeros((1, 1)),
                             juu=np.zeros((1, 1)), jux=np.zeros((1, 1)))
    return lin, stage, terminal


def test_backward_pass_one_step_hand_case():
    # zero terminal value, ju=2, juu=2: k = -juu^{-1} ju = -1, no cross term so K = 0
    lin, stage, terminal = _scalar_schedule(1)
    result = backward_pass(lin, stage, terminal, mu=0.0)
    assert result.gains.k[0, 0] == pytest.approx(-1.0)
    assert result.gains.K[0, 0, 0] == pytest.approx(0.0)
    # predicted decrease: -(k ju + 0.5 k juu k) = -(-2 + 1) = 1
    assert result.predicted_decrease == pytest.approx(1.0)


def test_backward_pass_matches_riccati_gains():
    rng = np.random.default_rng(21)
    for _ in range(25):
        A, B, Q, R, QT, x0, horizon = random_lqr_instance(rng)
        spec = CostSpec(Q=Q, R=R, Q_terminal=QT, reference=np.zeros(A.shape[0]))
        plant = LinearPlant(A, B)
        traj = plant.rollout(x0, np.zeros((horizon, B.shape[1])))
        lin = linearize_with_fd(plant, traj)
        stage, terminal = expand_trajectory(traj, spec)
        result = backward_pass(lin, stage, terminal, mu=0.0)
        gains, _ = riccati_recursion(A, B, Q, R, QT, horizon)
        for t in range(horizon):
            assert np.abs(result.gains.K[t] - gains[t]).max() <= 1e-8


def test_backward_pass_heavy_regularization_kills_gains():
    lin, stage, terminal = _scalar_schedule(5)
    result = backward_pass(lin, stage, terminal, mu=1e12)
    assert np.abs(result.gains.k).max() <= 1e-9
    assert np.abs(result.gains.K).max() <= 1e-9


def test_backward_pass_feedforward_scales_with_gradient():
    lin, stage, terminal = _scalar_schedule(1)
    base = backward_pass(lin, stage, terminal, mu=0.0)
    stage.ju = stage.ju * 3.0
    scaled = backward_pass(lin, stage, terminal, mu=0.0)
    assert scaled.gains.k[0, 0] == pytest.approx(3.0 * base.gains.k[0, 0])
    assert np.array_equal(scaled.gains.K, base.gains.K)


def test_backward_pass_regularization_failure():
    lin, stage, terminal = _scalar_schedule(1, juu=-2.0)
    with pytest.raises(RegularizationFailure):
        backward_pass(lin, stage, terminal, mu=0.0, mu_max=1e-3)
    # escalation succeeds once mu can exceed |juu|
    result = backward_pass(lin, stage, terminal, mu=0.0, mu_max=1e3)
    assert result.mu > 2.0


def test_backward_pass_escalation_terminates_on_random_indefinite_instances():
    rng = np.random.default_rng(33)
    for _ in range(20):
        horizon = int(rng.integers(1, 8))
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        lin = LinearizationSchedule(fx=rng.normal(0, 1, (horizon, n, n)),
                                    fu=rng.normal(0, 1, (horizon, n, m)))
        juu = rng.normal(0, 1, (horizon, m, m))
        juu = 0.5 * (juu + juu.transpose(0, 2, 1))  # possibly indefinite
        stage = CostExpansionSchedule(jx=rng.normal(0, 1, (horizon, n)),
                                      ju=rng.normal(0, 1, (horizon, m)),
                                      jxx=np.zeros((horizon, n, n)),
                                      juu=juu, jux=np.zeros((horizon, m, n)))
        terminal = CostExpansion(jx=np.zeros(n), ju=np.zeros(m), jxx=np.eye(n),
                                 juu=np.zeros((m, m)), jux=np.zeros((m, n)))
        result = backward_pass(lin, stage, terminal, mu=0.0, mu_max=1e8)
        assert np.isfinite(result.gains.k).all()


def test_forward_pass_zero_gains_identity():
    plant = CartpolePlant()
    rng = np.random.default_rng(2)
    nominal = plant.rollout(rng.normal(0, 0.3, 4), rng.normal(0, 2, (30, 1)))
    gains = GainSchedule.zeros(30, 4, 1)
    for alpha in (0.0, 0.5, 1.0):
        out = forward_pass(plant, nominal, gains, alpha)
        assert np.array_equal(out.states, nominal.states)
        assert np.array_equal(out.actions, nominal.actions)


def test_forward_pass_alpha_zero_is_nominal_with_any_gains():
    plant = CartpolePlant()
    rng = np.random.default_rng(3)
    nominal = plant.rollout(rng.normal(0, 0.3, 4), rng.normal(0, 2, (15, 1)))
    gains = GainSchedule(k=rng.normal(0, 1, (15, 1)), K=rng.normal(0, 0.1, (15, 1, 4)))
    out = forward_pass(plant, nominal, gains, 0.0)
    assert np.allclose(out.states, nominal.states, atol=1e-12)


def test_forward_pass_generic_and_kernel_paths_agree():
    plant = CartpolePlant()

    class Wrapped:  # same dynamics via the generic path
        n, m = 4, 1
        def step(self, x, u):
            return plant.step(x, u)

    rng = np.random.default_rng(4)
    nominal = plant.rollout(rng.normal(0, 0.2, 4), rng.normal(0, 1, (20, 1)))
    gains = GainSchedule(k=rng.normal(0, 0.5, (20, 1)), K=rng.normal(0, 0.05, (20, 1, 4)))
    fast = forward_pass(plant, nominal, gains, 0.7)
    slow = forward_pass(Wrapped(), nominal, gains, 0.7)
    assert np.allclose(fast.states, slow.states, atol=1e-12)
    assert np.allclose(fast.actions, slow.actions, atol=1e-12)


def test_forward_pass_lqr_cost_matches_quadratic_model():
    # on a linear plant with quadratic cost the predicted decrease is exact at alpha=1
    rng = np.random.default_rng(5)
    A, B, Q, R, QT, x0, horizon = random_lqr_instance(rng)
    spec = CostSpec(Q=Q, R=R, Q_terminal=QT, reference=np.zeros(A.shape[0]))
    plant = LinearPlant(A, B)
    nominal = plant.rollout(x0, np.zeros((horizon, B.shape[1])))
    nominal_cost = total_cost(nominal, spec)
    lin = linearize_with_fd(plant, nominal)
    stage, terminal = expand_trajectory(nominal, spec)
    result = backward_pass(lin, stage, terminal, mu=0.0)
    candidate = forward_pass(plant, nominal, result.gains, 1.0)
    achieved = nominal_cost - total_cost(candidate, spec)
    assert achieved == pytest.approx(result.predicted_decrease,
                                     rel=1e-6, abs=1e-9 * max(1.0, nominal_cost))


def test_line_search_zero_gains_stalls():
    plant = CartpolePlant()
    spec = CostSpec(Q=np.eye(4), R=np.eye(1), Q_terminal=np.eye(4), reference=np.zeros(4))
    nominal = plant.rollout(np.array([0.3, 0, 0, 0]), np.zeros((10, 1)))
    cost = total_cost(nominal, spec)
    res = line_search(plant, nominal, cost, GainSchedule.zeros(10, 4, 1), spec,
                      SolverSettings())
    assert not res.accepted


def test_line_search_from_riccati_optimum_stalls():
    rng = np.random.default_rng(6)
    A, B, Q, R, QT, x0, horizon = random_lqr_instance(rng)
    spec = CostSpec(Q=Q, R=R, Q_terminal=QT, reference=np.zeros(A.shape[0]))
    plant = LinearPlant(A, B)
    gains, _ = riccati_recursion(A, B, Q, R, QT, horizon)
    x = x0.copy()
    us = []
    for t in range(horizon):
        us.append(gains[t] @ x)
        x = plant.step(x, us[-1])
    nominal = plant.rollout(x0, np.array(us))
    nominal_cost = total_cost(nominal, spec)
    lin = linearize_with_fd(plant, nominal)
    stage, terminal = expand_trajectory(nominal, spec)
    result = backward_pass(lin, stage, terminal, mu=0.0)
    res = line_search(plant, nominal, nominal_cost, result.gains, spec, SolverSettings())
    assert not res.accepted  # already optimal: no strict improvement exists


def test_line_search_suboptimal_nominal_reaches_optimum_at_full_step():
    rng = np.random.default_rng(7)
    A, B, Q, R, QT, x0, horizon = random_lqr_instance(rng)
    spec = CostSpec(Q=Q, R=R, Q_terminal=QT, reference=np.zeros(A.shape[0]))
    plant = LinearPlant(A, B)
    nominal = plant.rollout(x0, np.zeros((horizon, B.shape[1])))
    nominal_cost = total_cost(nominal, spec)
    lin = linearize_with_fd(plant, nominal)
    stage, terminal = expand_trajectory(nominal, spec)
    result = backward_pass(lin, stage, terminal, mu=0.0)
    res = line_search(plant, nominal, nominal_cost, result.gains, spec, SolverSettings())
    opt = riccati_optimal_cost(A, B, Q, R, QT, x0, horizon)
    assert res.accepted and res.alpha == 1.0
    assert res.cost == pytest.approx(opt, rel=1e-8, abs=1e-10)


def test_solve_model_based_lqr_two_iterations():
    rng = np.random.default_rng(8)
    for _ in range(10):
        A, B, Q, R, QT, x0, horizon = random_lqr_instance(rng)
        spec = CostSpec(Q=Q, R=R, Q_terminal=QT, reference=np.zeros(A.shape[0]))
        report = solve_model_based(LinearPlant(A, B), spec, x0,
                                   SolverSettings(max_iterations=10, mu_init=1e-9),
                                   horizon=horizon)
        opt = riccati_optimal_cost(A, B, Q, R, QT, x0, horizon)
        accepted = sum(1 for r in report.records if r.event == "accepted")
        assert accepted <= 2
        assert abs(report.final_cost - opt) / max(abs(opt), 1e-12) <= 1e-6


def test_solve_objective_curve_monotone_on_cartpole():
    plant = CartpolePlant()
    spec = CostSpec(Q=np.diag([10.0, 1, 1, 1]), R=np.array([[0.25]]),
                    Q_terminal=np.diag([100.0, 10, 10, 10]), reference=np.zeros(4))
    report = solve_model_based(plant, spec, np.array([np.pi, 0, 0, 0]),
                               SolverSettings(max_iterations=40), horizon=80)
    diffs = np.diff(report.objectives)
    assert (diffs < 0).all()


def test_solve_requires_horizon_or_actions():
    plant = CartpolePlant()
    spec = CostSpec(Q=np.eye(4), R=np.eye(1), Q_terminal=np.eye(4), reference=np.zeros(4))
    with pytest.raises(ValueError):
        solve_model_based(plant, spec, np.zeros(4), SolverSettings())


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(alpha_ratio=1.5)
    with pytest.raises(ValueError):
        SolverSettings(max_iterations=0)
    s = SolverSettings()
    assert (np.diff(s.alphas) < 0).all()
