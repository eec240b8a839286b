import numpy as np
import pytest

from neural_ilqr import (BicyclePlant, CartpolePlant, Dataset, DatasetFormatError,
                         append_trajectory, collect_random_trials)
from neural_ilqr.data import TAG_PERTURBED, TAG_RANDOM, TAG_ROLLOUT, load, save


def test_single_trial_single_step():
    plant = CartpolePlant()
    x0 = np.array([0.2, 0.0, 0.0, 0.0])
    ds = collect_random_trials(plant, x0, trials=1, horizon=1, action_scale=5.0, seed=0)
    assert len(ds) == 1
    x, _, _ = ds.as_arrays()
    assert np.array_equal(x[0], x0)


def test_trial_count_arithmetic():
    plant = CartpolePlant()
    ds = collect_random_trials(plant, np.zeros(4), trials=100, horizon=150,
                               action_scale=10.0, seed=1)
    assert len(ds) == 100 * 150
    assert ds.trials == 100 and ds.trial_horizon == 150


def test_samples_replay_exactly():
    for plant in (CartpolePlant(), BicyclePlant()):
        ds = collect_random_trials(plant, np.array([0.1, -0.2, 0.0, 1.0]),
                                   trials=3, horizon=20,
                                   action_scale=np.full(plant.m, 2.0), seed=2)
        x, u, x_next = ds.as_arrays()
        for i in range(len(ds)):
            assert np.array_equal(plant.step(x[i], u[i]), x_next[i])


def test_collect_deterministic_per_seed():
    plant = CartpolePlant()
    a = collect_random_trials(plant, np.zeros(4), 5, 10, 3.0, seed=9)
    b = collect_random_trials(plant, np.zeros(4), 5, 10, 3.0, seed=9)
    c = collect_random_trials(plant, np.zeros(4), 5, 10, 3.0, seed=10)
    assert a == b
    assert a != c


def test_collect_validation():
    plant = CartpolePlant()
    with pytest.raises(ValueError):
        collect_random_trials(plant, np.zeros(4), 0, 10, 3.0)
    with pytest.raises(ValueError):
        collect_random_trials(plant, np.zeros(4), 1, 10, -3.0)


def test_append_trajectory_counts_and_replays():
    plant = CartpolePlant()
    ds = Dataset(4, 1, plant.kind, 0)
    rng = np.random.default_rng(3)
    traj = plant.rollout(rng.normal(0, 0.2, 4), rng.normal(0, 4, (25, 1)))
    append_trajectory(ds, traj, TAG_ROLLOUT)
    assert len(ds) == 25
    assert set(ds.tags) == {TAG_ROLLOUT}
    x, u, x_next = ds.as_arrays()
    for i in range(25):
        assert np.array_equal(plant.step(x[i], u[i]), x_next[i])


def test_append_empty_trajectory_is_noop():
    from neural_ilqr import Trajectory

    ds = Dataset(4, 1, "cartpole", 0)
    traj = Trajectory(states=np.zeros((1, 4)), actions=np.zeros((0, 1)))
    append_trajectory(ds, traj, TAG_PERTURBED)
    assert len(ds) == 0


def test_append_dimension_mismatch():
    from neural_ilqr import Trajectory

    ds = Dataset(4, 2, "vehicle", 0)
    traj = Trajectory(states=np.zeros((3, 4)), actions=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        append_trajectory(ds, traj, TAG_ROLLOUT)


def test_add_rejects_unknown_tag():
    ds = Dataset(2, 1, "linear", 0)
    with pytest.raises(ValueError):
        ds.add(np.zeros(2), np.zeros(1), np.zeros(2), "mystery")


def test_save_load_round_trip(tmp_path):
    plant = BicyclePlant()
    ds = collect_random_trials(plant, np.array([0.0, -10.0, 0.0, 8.0]),
                               trials=4, horizon=15,
                               action_scale=np.array([0.5, 3.0]), seed=4)
    append_trajectory(ds, plant.rollout(np.zeros(4), np.full((5, 2), 0.1)), TAG_PERTURBED)
    path = tmp_path / "transitions.csv"
    save(ds, path)
    assert load(path) == ds


def test_file_row_count(tmp_path):
    plant = CartpolePlant()
    ds = collect_random_trials(plant, np.zeros(4), 3, 7, 1.0, seed=5)
    path = tmp_path / "ds.csv"
    save(ds, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(ds) + 1
    assert lines[0] == "4,1,cartpole,5"


def test_load_corrupted_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("4,oops,cartpole,0\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load(path)
    path.write_text("4,1,cartpole\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load(path)


def test_load_reports_bad_line(tmp_path):
    plant = CartpolePlant()
    ds = collect_random_trials(plant, np.zeros(4), 1, 3, 1.0, seed=6)
    path = tmp_path / "ds.csv"
    save(ds, path)
    text = path.read_text(encoding="utf-8").splitlines()
    text[2] = text[2].replace(TAG_RANDOM, "weird-tag")
    path.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load(path)
    text[2] = ",".join([TAG_RANDOM] + ["abc"] * 9)
    path.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load(path)


def test_full_precision_round_trip(tmp_path):
    # values with no short decimal representation survive exactly
    ds = Dataset(2, 1, "linear", 0)
    rng = np.random.default_rng(7)
    for _ in range(50):
        ds.add(rng.normal(0, 1, 2) / 3.0, rng.normal(0, 1, 1) * np.pi,
               rng.normal(0, 1e-12, 2), TAG_RANDOM)
    path = tmp_path / "precise.csv"
    save(ds, path)
    x0, u0, y0 = ds.as_arrays()
    x1, u1, y1 = load(path).as_arrays()
    assert np.array_equal(x0, x1) and np.array_equal(u0, u1) and np.array_equal(y0, y1)
