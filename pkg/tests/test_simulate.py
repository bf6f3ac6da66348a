import numpy as np
import pytest

from psictl import ControlProblem, QuadraticCost
from psictl.exceptions import ValidationError
from psictl.simulate import (
    Controller,
    Trajectory,
    ZeroPolicy,
    clamp_state,
    closed_loop_ensemble,
    closed_loop_run,
)


class RecordingPolicy:
    """Zero feedback that remembers every state batch it was shown."""

    def __init__(self, n_inputs):
        self.n_inputs = n_inputs
        self.seen = []

    def control_field(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.seen.append(X.copy())
        return np.zeros((X.shape[0], self.n_inputs)), np.ones(X.shape[0], bool)


class ConstantPolicy:
    def __init__(self, u):
        self.u = np.asarray(u, dtype=float)

    def control_field(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.tile(self.u, (X.shape[0], 1)), np.ones(X.shape[0], bool)


class UnderflowingPolicy:
    """Contract for underflow: zero the bad rows and flag them."""

    def __init__(self, n_inputs):
        self.n_inputs = n_inputs

    def control_field(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.zeros((X.shape[0], self.n_inputs)), np.zeros(X.shape[0], bool)


def _drift_only(drift, dim=None):
    dim = dim or len(drift)
    zeros = [[0.0] * dim for _ in range(dim)]
    return ControlProblem(
        drift=drift, diffusion=zeros, control_map=zeros, control_weight=zeros,
        terminal_cost=QuadraticCost([0.0] * dim, [np.inf] * dim),
        running_cost=QuadraticCost([0.0] * dim, [np.inf] * dim),
        t_start=0.0, t_end=1.0, lam=1.0,
    )


def _box(policy, half=1.5, dim=2):
    return Controller(policy, [-half] * dim, [half] * dim)


def test_clamp_state():
    x = np.array([[0.2, -3.0], [1.8, 0.4]])
    out = clamp_state(x, [-1.5, -1.5], [1.5, 1.5])
    assert out.tolist() == [[0.2, -1.5], [1.5, 0.4]]
    with pytest.raises(ValidationError):
        clamp_state(x, [1.0, 1.0], [-1.0, -1.0])


def test_trajectory_shape_invariant(vdp):
    traj = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, rng=0)
    assert len(traj.times) == len(traj.states) == len(traj.controls) + 1
    assert traj.times[0] == 0.0
    assert traj.times[-1] == 0.05
    assert np.all(np.diff(traj.times) > 0)
    # trailing remainder still lands exactly on the requested duration
    traj = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.0505, 1e-3, rng=0)
    assert traj.times[-1] == 0.0505
    assert len(traj.controls) == 51


def test_trajectory_length_validation():
    with pytest.raises(ValidationError):
        Trajectory(np.zeros(3), np.zeros((3, 1)), np.zeros((3, 1)))


def test_same_seed_same_path(vdp):
    a = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, rng=7)
    b = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, rng=7)
    c = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, rng=8)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.controls, b.controls)
    assert not np.array_equal(a.states, c.states)
    assert a.seed == 7


def test_ensemble_matches_solo_runs(vdp):
    seeds = [0, 1, 2]
    batch = closed_loop_ensemble(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, seeds)
    for seed, traj in zip(seeds, batch):
        solo = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.05, 1e-3, rng=seed)
        assert traj.seed == seed
        assert np.array_equal(traj.states, solo.states)
        assert np.array_equal(traj.controls, solo.controls)


def test_policy_sees_clamped_state_while_plant_runs_free():
    prob = _drift_only(["2"], dim=1)
    policy = RecordingPolicy(1)
    traj = closed_loop_run(
        prob, Controller(policy, [-0.5], [0.5]), 1.0, 0.01, rng=0
    )
    seen = np.concatenate(policy.seen)[:, 0]
    assert seen.max() == 0.5             # controller input saturates
    assert traj.states[-1, 0] == pytest.approx(2.0, rel=1e-12)  # plant does not


def test_control_enters_through_input_map():
    prob = ControlProblem(
        drift=["0"], diffusion=[[1.0]], control_map=[[1.0]],
        control_weight=[[0.5]],
        terminal_cost=QuadraticCost([0.0], [1.0]),
        running_cost=QuadraticCost([0.0], [np.inf]),
        t_start=0.0, t_end=1.0, plant_diffusion=[[0.0]],
    )
    traj = closed_loop_run(
        prob, Controller(ConstantPolicy([1.0]), [-5.0], [5.0]), 0.5, 0.01, rng=0
    )
    assert traj.states[-1, 0] == pytest.approx(0.5, rel=1e-12)
    assert np.all(traj.controls == 1.0)


def test_underflow_steps_counted(vdp):
    traj = closed_loop_run(vdp, _box(UnderflowingPolicy(2)), 0.02, 1e-3, rng=0)
    assert traj.underflow_steps == 20
    batch = closed_loop_ensemble(vdp, _box(UnderflowingPolicy(2)), 0.02, 1e-3, [0, 1])
    assert [t.underflow_steps for t in batch] == [20, 20]


def test_zero_duration_rejected(vdp):
    with pytest.raises(ValidationError):
        closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.0, 1e-3, rng=0)


def test_controller_box_validation():
    with pytest.raises(ValidationError):
        Controller(ZeroPolicy(1), [1.0], [-1.0])
    with pytest.raises(ValidationError):
        Controller(ZeroPolicy(1), [1.0], [1.0])


def test_csv_stride_and_active_columns(vdp, tmp_path):
    traj = closed_loop_run(vdp, _box(ZeroPolicy(2)), 0.005, 1e-3, rng=0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path, stride=2, active_inputs=[1], provenance=("seed = 0",))
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed = 0"
    assert lines[1] == "t,x1,x2,u2"
    assert len(lines) == 2 + 3          # control rows 0, 2, 4
    assert [float(v) for v in lines[2].split(",")][0] == 0.0
    # the final state has no control attached, so it is never exported
    last_t = float(lines[-1].split(",")[0])
    assert last_t < traj.times[-1]
    with pytest.raises(ValidationError):
        traj.to_csv(path, stride=0)
