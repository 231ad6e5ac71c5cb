import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pinc import autodiff as ad
from pinc import physics
from pinc.errors import ConfigError, ContractError, RegistryError

state = st.floats(-3.0, 3.0)
control = st.floats(-1.0, 1.0)
level = st.floats(0.0, 15.0)


def test_registry_lookup_and_unknown_name():
    assert physics.get_model("van_der_pol").n_states == 2
    assert physics.get_model("four_tanks").n_controls == 2
    with pytest.raises(RegistryError):
        physics.get_model("lorenz")


def test_van_der_pol_declared_ranges(vdp):
    assert vdp.state_ranges == ((-3.0, 3.0), (-3.0, 3.0))
    assert vdp.control_ranges == ((-1.0, 1.0),)
    assert vdp.parameters["mu"] == 1.0


@given(u=st.floats(-2.0, 2.0))
def test_van_der_pol_equilibrium(u):
    np.testing.assert_array_equal(physics.rhs(physics.van_der_pol(), [u, 0.0], [u]), [0.0, 0.0])


def test_van_der_pol_hand_value(vdp):
    np.testing.assert_array_equal(physics.rhs(vdp, [0.0, 1.0], [0.0]), [1.0, 1.0])


def test_four_tanks_empty_is_at_rest(tanks):
    np.testing.assert_array_equal(physics.rhs(tanks, np.zeros(4), np.zeros(2)), np.zeros(4))


def test_residual_examples(vdp):
    np.testing.assert_array_equal(physics.residual(vdp, [0.7, 0.0], [0.0, 0.0], [0.7]), [0.0, 0.0])
    np.testing.assert_array_equal(physics.residual(vdp, [0.0, 1.0], [0.0, 0.0], [0.0]), [-1.0, -1.0])


def test_dimension_mismatch_rejected(vdp):
    with pytest.raises(ContractError):
        physics.rhs(vdp, [0.0, 1.0, 2.0], [0.0])
    with pytest.raises(ContractError):
        physics.residual(vdp, [0.0, 1.0], [0.0], [0.0])


@given(x1=state, x2=state, u=control)
def test_residual_of_exact_derivative_is_zero(x1, x2, u):
    m = physics.van_der_pol()
    y = np.array([x1, x2])
    np.testing.assert_array_equal(physics.residual(m, y, physics.rhs(m, y, [u]), [u]), 0.0)


@given(x1=state, x2=state, u1=control, u2=control)
def test_van_der_pol_linear_in_u(x1, x2, u1, u2):
    m = physics.van_der_pol()
    d = physics.rhs(m, [x1, x2], [u2]) - physics.rhs(m, [x1, x2], [u1])
    np.testing.assert_allclose(d, [0.0, u2 - u1], rtol=0, atol=1e-12)


@given(h=st.lists(level, min_size=4, max_size=4), u=st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_four_tank_h1_rate_increases_with_h3(h, u):
    m = physics.four_tanks()
    h = np.array(h)
    hp = h.copy()
    hp[2] += 0.1
    assert physics.rhs(m, hp, u)[0] > physics.rhs(m, h, u)[0]


@given(h=st.lists(st.floats(0.01, 15.0), min_size=4, max_size=4))
def test_four_tank_rhs_continuous(h):
    m = physics.four_tanks()
    h = np.array(h)
    a = physics.rhs(m, h, [2.0, 2.0])
    b = physics.rhs(m, h + 1e-9, [2.0, 2.0])
    assert np.max(np.abs(a - b)) < 1e-5


def test_four_tank_negative_level_clamped(tanks):
    out = physics.rhs(tanks, [-1.0, 2.0, 2.0, 2.0], [1.0, 1.0])
    assert np.all(np.isfinite(out))
    tape = ad.Tape()
    h = tape.leaf(np.array([-1.0, 2.0, 2.0, 2.0]))
    J = ad.jacobian(tape, physics.rhs(tanks, h, np.array([1.0, 1.0])), [h])
    assert np.all(np.isfinite(J))
    assert J[0, 0] == 0.0


def test_four_tank_matches_hand_evaluation(tanks):
    p = tanks.parameters
    h, u = np.array([10.0, 12.0, 3.0, 4.0]), np.array([2.5, 3.0])
    w = np.array([p["a1"], p["a2"], p["a3"], p["a4"]]) * np.sqrt(2 * p["g"] * h)
    q1, q2 = p["k1"] * u[0], p["k2"] * u[1]
    expected = [
        (-w[0] + w[2] + p["gamma1"] * q1) / p["A1"],
        (-w[1] + w[3] + p["gamma2"] * q2) / p["A2"],
        (-w[2] + (1 - p["gamma2"]) * q2) / p["A3"],
        (-w[3] + (1 - p["gamma1"]) * q1) / p["A4"],
    ]
    np.testing.assert_allclose(physics.rhs(tanks, h, u), expected, rtol=1e-14)


def test_steady_state_is_an_equilibrium(tanks):
    u, h = physics.four_tanks_steady_state(tanks, 10.0, 11.0)
    np.testing.assert_allclose(physics.rhs(tanks, h, u), 0.0, atol=1e-12)


@pytest.mark.parametrize(
    "override",
    [{"A1": 0.0}, {"a3": -0.1}, {"gamma1": 1.0}, {"gamma2": 0.0}, {"mystery": 1.0}],
)
def test_invalid_tank_parameters_rejected(override):
    with pytest.raises(ConfigError):
        physics.four_tanks(override)


def test_degenerate_range_rejected():
    with pytest.raises(ConfigError):
        physics.van_der_pol(state_ranges=[(1.0, 1.0), (-3.0, 3.0)])


def test_parameter_override(vdp):
    m = physics.get_model("van_der_pol", {"mu": 2.0})
    assert physics.rhs(m, [0.0, 1.0], [0.0])[1] == 2.0
