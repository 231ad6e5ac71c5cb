import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pinc import metrics
from pinc.errors import ContractError
from pinc.simulator import Trajectory

TOL = 1e-12

arrays = hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=st.floats(-5, 5))


def traj(states, Ts=0.5, source="rk"):
    states = np.asarray(states, dtype=float)
    return Trajectory(Ts=Ts, states=states, controls=np.zeros((len(states) - 1, 1)), source=source)


def test_mse_gen_identical_is_zero():
    a = traj(np.random.default_rng(0).normal(size=(6, 2)))
    assert metrics.mse_gen(a, a) == 0.0


def test_mse_gen_constant_offset_on_one_of_two_outputs():
    base = np.random.default_rng(1).normal(size=(9, 2))
    shifted = base.copy()
    shifted[:, 1] += 0.1
    assert abs(metrics.mse_gen(traj(shifted), traj(base)) - 0.005) < TOL


def test_mse_gen_three_step_hand_case():
    ref = traj([[0.0, 0.0], [1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    pred = traj([[0.0, 0.0], [1.5, 2.0], [0.0, 0.0], [1.0, -1.0]])
    # output 1 errors 0.5, 0, -2 ; output 2 errors 0, -1, 0
    expected = ((0.25 + 0 + 4) / 3 + (0 + 1 + 0) / 3) / 2
    assert abs(metrics.mse_gen(pred, ref) - expected) < TOL


def test_mse_gen_skips_initial_state():
    a = traj([[5.0], [1.0], [2.0]])
    b = traj([[-5.0], [1.0], [2.0]])
    assert metrics.mse_gen(a, b) == 0.0


def test_length_mismatch_rejected():
    with pytest.raises(ContractError):
        metrics.mse_gen(traj(np.zeros((4, 2))), traj(np.zeros((5, 2))))
    with pytest.raises(ContractError):
        metrics.iae(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ContractError):
        metrics.rmse(np.zeros((3, 2)), np.zeros((3, 1)))


def test_sampling_period_mismatch_rejected():
    with pytest.raises(ContractError):
        metrics.mse_gen(traj(np.zeros((3, 1)), Ts=0.5), traj(np.zeros((3, 1)), Ts=10.0))


def test_iae_perfect_and_constant_error():
    r = np.random.default_rng(2).normal(size=(7, 3))
    assert metrics.iae(r, r) == (0.0, 0.0)
    norm, total = metrics.iae(r + 1.0, r)
    assert abs(norm - 1.0) < TOL and abs(total - 21.0) < TOL


def test_iae_two_output_four_step_hand_case():
    r = np.zeros((4, 2))
    y = np.array([[1.0, -2.0], [0.5, 0.0], [-1.0, 1.0], [0.0, 3.0]])
    # sums of |error|: output 1 -> 2.5, output 2 -> 6
    norm, total = metrics.iae(y, r)
    assert abs(norm - (2.5 / 4 + 6 / 4) / 2) < TOL
    assert abs(total - 8.5) < TOL


def test_rmse_examples():
    r = np.random.default_rng(3).normal(size=(5, 2))
    assert metrics.rmse(r, r) == 0.0
    assert abs(metrics.rmse(r + 0.3, r) - 0.3) < TOL
    assert abs(metrics.rmse(np.array([[3.0, 4.0]]), np.zeros((1, 2))) - 3.5) < TOL


@given(y=arrays, seed=st.integers(0, 1000))
def test_metrics_permutation_invariant(y, seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=y.shape)
    perm = rng.permutation(y.shape[1])
    assert abs(metrics.rmse(y, r) - metrics.rmse(y[:, perm], r[:, perm])) < 1e-12
    a, b = metrics.iae(y, r), metrics.iae(y[:, perm], r[:, perm])
    assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-9
    assert abs(metrics.mse_gen(y, r) - metrics.mse_gen(y[:, perm], r[:, perm])) < 1e-12


@given(y=arrays)
def test_per_output_rms_bounds_mean_abs(y):
    out = metrics.per_output(y, np.zeros_like(y))
    assert np.all(np.array(out["rmse"]) >= np.array(out["iae"]) - 1e-12)


@given(y=arrays)
def test_metrics_non_negative(y):
    r = np.ones_like(y)
    assert metrics.rmse(y, r) >= 0 and metrics.iae(y, r)[0] >= 0 and metrics.mse_gen(y, r) >= 0


def test_metrics_survive_serialization(tmp_path):
    rng = np.random.default_rng(4)
    a = Trajectory(Ts=0.5, states=rng.normal(size=(11, 2)), controls=rng.normal(size=(10, 1)), source="pinc-self-loop")
    b = Trajectory(Ts=0.5, states=rng.normal(size=(11, 2)), controls=a.controls, source="rk")
    a2 = Trajectory.from_csv(a.to_csv(tmp_path / "a.csv"))
    b2 = Trajectory.from_csv(b.to_csv(tmp_path / "b.csv"))
    assert metrics.mse_gen(a, b) == metrics.mse_gen(a2, b2)
    assert metrics.iae(a, b) == metrics.iae(a2, b2)


def test_report_round_trip_and_validation():
    rep = metrics.MetricReport.for_control(np.ones((4, 2)), np.zeros((4, 2)))
    assert rep.iae_normalized == 1.0 and rep.steps == 4
    assert metrics.MetricReport.from_json(rep.to_json()) == rep
    with pytest.raises(ContractError):
        metrics.MetricReport(rmse=float("nan"))
    with pytest.raises(ContractError):
        metrics.MetricReport(mse_gen=-1.0)
