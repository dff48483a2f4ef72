# tests/test_ekf_loc.py
import numpy as np
import pytest
from scipy.linalg import expm

from core.ekf_loc import (EkfInputs, discretize, ekf_init, ekf_predict, ekf_reanchor, ekf_update, gate_threshold,
                          measurement, measurement_jacobian)
from core.quad_dynamics import hat
from core.sensors import project
from models.models import EkfConfig


def test_gate_threshold_is_chi_square_99():
    assert gate_threshold() == pytest.approx(9.21, abs=0.01)


@pytest.mark.parametrize("omega", [[0.0, 0.0, 0.0], [0.2, -0.1, 0.5], [0.0, 0.0, 2.0]])
def test_discretize_matches_matrix_exponential(omega):
    dt = 0.08
    A = -hat(omega)
    F, G = discretize(np.array(omega), dt)
    np.testing.assert_allclose(F, expm(A * dt), atol=1e-12)
    # integral of expm(A s) over [0, dt] from the augmented exponential
    aug = np.zeros((6, 6))
    aug[:3, :3] = A
    aug[:3, 3:] = np.eye(3)
    np.testing.assert_allclose(G, expm(aug * dt)[:3, 3:], atol=1e-12)


def test_jacobian_matches_central_differences(k):
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(100):
        x = np.array([rng.uniform(5.0, 200.0), rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)])
        J = measurement_jacobian(x, k)
        numeric = np.column_stack([(measurement(x + h * e, k) - measurement(x - h * e, k)) / (2.0 * h)
                                   for e in np.eye(3)])
        scale = np.abs(numeric).max()
        assert np.abs(J - numeric).max() <= 1e-4 * scale


def test_init_back_projects_pixel(k):
    s = ekf_init((352.0, 176.0), 10.0, k)
    np.testing.assert_allclose(s.x, [10.0, 1.0, -2.0])
    assert s.depth == 10.0
    assert np.all(np.linalg.eigvalsh(s.P) > 0.0)
    moved = ekf_reanchor(s, (320.0, 240.0), k)
    assert moved.depth == 10.0
    np.testing.assert_allclose(moved.x[1:], 0.0)
    assert moved.P[0, 0] == pytest.approx(s.P[0, 0])


def test_predict_without_motion_keeps_point(k):
    s = ekf_init((330.0, 250.0), 20.0, k)
    out = ekf_predict(s, EkfInputs(np.zeros(3), np.zeros(3)), 0.08)
    np.testing.assert_allclose(out.x, s.x)
    assert np.trace(out.P) > np.trace(s.P)
    with pytest.raises(ValueError):
        ekf_predict(s, EkfInputs(np.zeros(3), np.zeros(3)), 0.5)


def test_ekf_refines_depth_during_approach(k):
    cfg = EkfConfig()
    dt = 0.08
    v_c = np.array([2.0, 0.0, 0.0])
    truth = np.array([50.0, 2.0, -3.0])
    s = ekf_init(project(truth, k), 40.0, k, cfg)
    initial_error = abs(s.depth - truth[0])
    for _ in range(int(15.0 / dt)):
        truth = truth - v_c * dt
        s = ekf_predict(s, EkfInputs(np.zeros(3), v_c), dt, cfg)
        s, _ = ekf_update(s, project(truth, k), k, cfg)
    assert abs(s.depth - truth[0]) < 0.5 * initial_error


def test_gate_rejects_outlier(k):
    s = ekf_init((320.0, 240.0), 30.0, k)
    same, info = ekf_update(s, (600.0, 20.0), k)
    assert info.gated
    assert info.mahalanobis > gate_threshold()
    assert same is s


def test_nees_is_consistent_over_monte_carlo_runs(k):
    # exact point dynamics and 1 px measurement noise; the filter's process noise is negligible
    cfg = EkfConfig(q_c=(1e-8, 1e-8, 1e-8))
    rng = np.random.default_rng(11)
    dt, steps = 0.08, 40
    omega, v_c = np.array([0.0, 0.0, 0.05]), np.array([2.0, 0.6, -0.4])
    F, G = discretize(omega, dt)
    nees = []
    for _ in range(50):
        truth = np.array([60.0, 3.0, -5.0])
        prior = ekf_init(project(truth, k), truth[0], k, cfg)
        s = type(prior)(truth + np.linalg.cholesky(prior.P) @ rng.standard_normal(3), prior.P)
        for _ in range(steps):
            truth = F @ truth - G @ v_c
            s = ekf_predict(s, EkfInputs(omega, v_c), dt, cfg)
            s, _ = ekf_update(s, measurement(truth, k) + rng.normal(0.0, 1.0, 2), k, cfg)
        e = s.x - truth
        nees.append(float(e @ np.linalg.solve(s.P, e)))
    assert 1.0 <= np.mean(nees) <= 6.0
