# tests/test_quad_dynamics.py
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from core.exceptions import NumericalFault
from core.quad_dynamics import (ControlInput, QuadParams, QuadState, derivatives, hat, step, vee,
                                yaw_matrix, yaw_of)

DT = 0.0025
vectors = st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=3, max_size=3)


@given(vectors)
def test_hat_vee_inverse(w):
    np.testing.assert_allclose(vee(hat(w)), w)
    np.testing.assert_allclose(hat(w) @ np.array([1.0, -2.0, 0.5]), np.cross(w, [1.0, -2.0, 0.5]), atol=1e-12)


def test_hover_equilibrium_holds(params):
    state = QuadState.at_rest([1.0, 2.0, -20.0], yaw=0.3)
    u = ControlInput(params.hover_thrust, np.zeros(3))
    for _ in range(4000):  # 10 s
        state = step(state, u, params, DT)
    np.testing.assert_allclose(state.r, [1.0, 2.0, -20.0], atol=1e-6)
    assert yaw_of(state.R) == pytest.approx(0.3, abs=1e-9)


def test_free_fall_matches_closed_form():
    params = QuadParams(drag=np.zeros((3, 3)))
    state = QuadState.at_rest([0.0, 0.0, -100.0])
    u = ControlInput(0.0, np.zeros(3))
    for _ in range(400):  # 1 s
        state = step(state, u, params, DT)
    assert state.r[2] == pytest.approx(-100.0 + 0.5 * 9.81, abs=1e-6)
    assert state.v[2] == pytest.approx(9.81, abs=1e-9)


def test_rotation_stays_orthonormal(params):
    state = QuadState(np.zeros(3), np.zeros(3), np.eye(3), np.array([0.7, -1.1, 2.3]))
    u = ControlInput(params.hover_thrust, np.array([0.001, -0.002, 0.0005]))
    for _ in range(10_000):
        state = step(state, u, params, DT)
    assert np.abs(state.R.T @ state.R - np.eye(3)).max() < 1e-6
    assert np.linalg.det(state.R) == pytest.approx(1.0, abs=1e-6)


def test_constant_rate_rotation_matches_exponential(params):
    # spin about a principal axis: omega stays constant
    w = np.array([0.0, 0.0, 1.5])
    state = QuadState(np.zeros(3), np.zeros(3), np.eye(3), w)
    u = ControlInput(params.hover_thrust, np.zeros(3))
    for _ in range(400):
        state = step(state, u, params, DT)
    np.testing.assert_allclose(state.R, expm(hat(w) * 1.0), atol=1e-8)


def test_drag_opposes_velocity(params):
    state = QuadState(np.zeros(3), np.array([3.0, 0.0, 0.0]), np.eye(3), np.zeros(3))
    d = derivatives(state, ControlInput(params.hover_thrust, np.zeros(3)), params)
    assert d.v_dot[0] < 0.0
    assert d.v_dot[2] == pytest.approx(0.0, abs=1e-12)


def test_step_rejects_bad_inputs(params):
    state = QuadState.at_rest([0.0, 0.0, -5.0])
    with pytest.raises(ValueError):
        step(state, ControlInput(params.hover_thrust, np.zeros(3)), params, 0.02)
    with pytest.raises(ValueError):
        step(state, ControlInput(params.thrust_max * 1.01, np.zeros(3)), params, DT)
    with pytest.raises(ValueError):
        step(state, ControlInput(-1.0, np.zeros(3)), params, DT)


def test_non_finite_state_raises(params):
    state = QuadState(np.array([np.nan, 0.0, 0.0]), np.zeros(3), np.eye(3), np.zeros(3))
    with pytest.raises(NumericalFault):
        step(state, ControlInput(params.hover_thrust, np.zeros(3)), params, DT)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=-3.1, max_value=3.1))
def test_yaw_round_trip(yaw):
    assert yaw_of(yaw_matrix(yaw)) == pytest.approx(yaw, abs=1e-12)
