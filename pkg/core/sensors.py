# core/sensors.py
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from models.models import CameraConfig, NoiseConfig
from .exceptions import BehindCameraError
from .quad_dynamics import QuadState

logger = logging.getLogger("sensors")


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length: float = 320.0
    u0: float = 320.0
    v0: float = 240.0
    width: int = 640
    height: int = 480

    @classmethod
    def from_config(cls, cfg: CameraConfig) -> "CameraIntrinsics":
        return cls(cfg.focal_length, cfg.principal_point[0], cfg.principal_point[1], cfg.width, cfg.height)

    @property
    def frame_area(self) -> float:
        return float(self.width * self.height)

    def in_frame(self, u: float, v: float, margin: float = 0.0) -> bool:
        return margin <= u < self.width - margin and margin <= v < self.height - margin


class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class SensorBundle:
    gps_position: np.ndarray
    gps_velocity: np.ndarray
    altitude: float
    imu_rates: np.ndarray
    imu_rpy: np.ndarray # (roll, pitch, yaw)
    timestamp: float


def world_to_camera(p_world, quad: QuadState) -> np.ndarray:
    """Camera (= body) frame coordinates; accepts a point or an (N, 3) array."""
    d = np.asarray(p_world, dtype=float) - quad.r
    return d @ quad.R # row-wise R^T d


def camera_to_world(p_cam, quad: QuadState) -> np.ndarray:
    return np.asarray(p_cam, dtype=float) @ quad.R.T + quad.r


def project(p, k: CameraIntrinsics) -> PixelPoint:
    x_c, y_c, z_c = (float(c) for c in p)
    if x_c <= 0.0:
        raise BehindCameraError(f"point has x_c = {x_c:.6g} <= 0")
    return PixelPoint((y_c * k.focal_length + x_c * k.u0) / x_c, (z_c * k.focal_length + x_c * k.v0) / x_c)


def project_many(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection of (N, 3) camera points with x_c > 0 into (N, 2) pixels."""
    pts = np.atleast_2d(points)
    if np.any(pts[:, 0] <= 0.0):
        raise BehindCameraError("at least one point has x_c <= 0")
    return np.column_stack((k.u0 + k.focal_length * pts[:, 1] / pts[:, 0],
                            k.v0 + k.focal_length * pts[:, 2] / pts[:, 0]))


def back_project_lateral(u: float, x_c: float, k: CameraIntrinsics) -> float:
    return (u - k.u0) * x_c / k.focal_length


def back_project_vertical(v: float, x_c: float, k: CameraIntrinsics) -> float:
    return (v - k.v0) * x_c / k.focal_length


def back_project(pixel, x_c: float, k: CameraIntrinsics) -> np.ndarray:
    return np.array([x_c, back_project_lateral(pixel[0], x_c, k), back_project_vertical(pixel[1], x_c, k)])


def pixel_ray(pixel, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame viewing direction with unit x component."""
    return np.array([1.0, (pixel[0] - k.u0) / k.focal_length, (pixel[1] - k.v0) / k.focal_length])


def rpy_from_matrix(R: np.ndarray) -> np.ndarray:
    yaw, pitch, roll = Rotation.from_matrix(R).as_euler("ZYX")
    return np.array([roll, pitch, yaw])


def matrix_from_rpy(rpy) -> np.ndarray:
    roll, pitch, yaw = rpy
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def sample_sensors(quad: QuadState, noise: NoiseConfig, rng: np.random.Generator, timestamp: float = 0.0) -> SensorBundle:
    # Draws happen for every channel even at zero sigma so stream consumption is noise-independent
    gps_p = quad.r + rng.normal(0.0, noise.gps_position, 3)
    gps_v = quad.v + rng.normal(0.0, noise.gps_velocity, 3)
    altitude = -quad.r[2] + rng.normal(0.0, noise.altimeter)
    rates = quad.omega + rng.normal(0.0, noise.imu_rate, 3)
    rpy = rpy_from_matrix(quad.R) + rng.normal(0.0, noise.imu_rpy, 3)
    return SensorBundle(gps_p, gps_v, float(altitude), rates, rpy, timestamp)


def body_velocity(bundle: SensorBundle) -> np.ndarray:
    return matrix_from_rpy(bundle.imu_rpy).T @ bundle.gps_velocity
