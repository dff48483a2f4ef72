# tests/test_sensors.py
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.exceptions import BehindCameraError
from core.quad_dynamics import QuadState, yaw_matrix
from core.sensors import (CameraIntrinsics, back_project, body_velocity, camera_to_world, matrix_from_rpy, pixel_ray, project,
                          project_many, rpy_from_matrix, sample_sensors, world_to_camera)
from models.models import NoiseConfig


def test_principal_point_projection(k):
    assert project([10.0, 0.0, 0.0], k) == pytest.approx((320.0, 240.0))
    u, v = project([10.0, 1.0, -2.0], k)
    assert u == pytest.approx(352.0)
    assert v == pytest.approx(176.0)


def test_behind_camera_raises(k):
    with pytest.raises(BehindCameraError):
        project([0.0, 1.0, 1.0], k)
    with pytest.raises(BehindCameraError):
        project_many(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]), k)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.5, max_value=500.0), st.floats(min_value=-50.0, max_value=50.0),
       st.floats(min_value=-50.0, max_value=50.0))
def test_back_project_inverts_project(x_c, y_c, z_c):
    k = CameraIntrinsics()
    pixel = project([x_c, y_c, z_c], k)
    np.testing.assert_allclose(back_project(pixel, x_c, k), [x_c, y_c, z_c], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(x_c * pixel_ray(pixel, k), [x_c, y_c, z_c], rtol=1e-9, atol=1e-9)


def test_camera_frame_round_trip():
    quad = QuadState(np.array([5.0, -3.0, -20.0]), np.zeros(3), yaw_matrix(0.8), np.zeros(3))
    p = np.array([[40.0, 10.0, 0.0], [12.0, -7.0, -33.0]])
    np.testing.assert_allclose(camera_to_world(world_to_camera(p, quad), quad), p, atol=1e-12)
    # yaw 0 camera looks north: a point due north is on the optical axis
    level = QuadState.at_rest([0.0, 0.0, -10.0])
    np.testing.assert_allclose(world_to_camera([30.0, 0.0, -10.0], level), [30.0, 0.0, 0.0])


def test_rpy_round_trip():
    rpy = np.array([0.05, -0.1, 1.2])
    np.testing.assert_allclose(rpy_from_matrix(matrix_from_rpy(rpy)), rpy, atol=1e-12)


def test_noiseless_sensors_report_truth(noiseless, rng):
    quad = QuadState(np.array([1.0, 2.0, -30.0]), np.array([0.5, 0.0, -0.2]), yaw_matrix(0.4), np.zeros(3))
    s = sample_sensors(quad, noiseless, rng, timestamp=3.0)
    np.testing.assert_allclose(s.gps_position, quad.r)
    assert s.altitude == pytest.approx(30.0)
    assert s.imu_rpy[2] == pytest.approx(0.4)
    assert s.timestamp == 3.0
    np.testing.assert_allclose(body_velocity(s), quad.R.T @ quad.v, atol=1e-12)


def test_sensor_noise_statistics():
    noise = NoiseConfig(altimeter=0.1)
    rng = np.random.default_rng(7)
    quad = QuadState.at_rest([0.0, 0.0, -40.0])
    alt = np.array([sample_sensors(quad, noise, rng).altitude for _ in range(4000)])
    assert alt.mean() == pytest.approx(40.0, abs=0.01)
    assert alt.std() == pytest.approx(0.1, rel=0.05)


def test_same_seed_same_draws(turbine_quad):
    noise = NoiseConfig()
    a = sample_sensors(turbine_quad, noise, np.random.default_rng(99))
    b = sample_sensors(turbine_quad, noise, np.random.default_rng(99))
    np.testing.assert_array_equal(a.gps_position, b.gps_position)
    assert a.altitude == b.altitude
