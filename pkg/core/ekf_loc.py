# core/ekf_loc.py
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from filterpy.kalman import predict as kalman_predict
from filterpy.kalman import update as kalman_update
from scipy.stats import chi2

from models.models import EkfConfig
from .quad_dynamics import hat
from .sensors import CameraIntrinsics, back_project

logger = logging.getLogger("ekf_loc")

SMALL_RATE = 1e-12


@dataclass(frozen=True)
class EkfState:
    x: np.ndarray # camera-frame point (x_c, y_c, z_c)
    P: np.ndarray # 3x3

    @property
    def depth(self) -> float:
        return float(self.x[0])

    @property
    def depth_std(self) -> float:
        return float(np.sqrt(self.P[0, 0]))


@dataclass(frozen=True)
class EkfInputs:
    omega: np.ndarray # body rates, rad/s
    v_c: np.ndarray # camera-frame translational velocity, m/s


@dataclass(frozen=True)
class EkfStepInfo:
    innovation: np.ndarray
    mahalanobis: float
    gated: bool # measurement rejected by the innovation gate
    floored: bool # depth floor applied


def gate_threshold(cfg: Optional[EkfConfig] = None) -> float:
    """Chi-square quantile for 2 degrees of freedom (9.21 at 99 %)."""
    cfg = cfg or EkfConfig()
    return float(chi2.ppf(cfg.gate_probability, 2))


def discretize(omega: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact transition of x_dot = -hat(omega) x - v_c over dt: returns (F, G) with x+ = F x - G v_c."""
    w = np.asarray(omega, dtype=float)
    rate = float(np.linalg.norm(w))
    if rate < SMALL_RATE:
        return np.eye(3), dt * np.eye(3)
    K = hat(w / rate)
    K2 = K @ K
    theta = rate * dt
    F = np.eye(3) - np.sin(theta) * K + (1.0 - np.cos(theta)) * K2
    G = dt * np.eye(3) - ((1.0 - np.cos(theta)) / rate) * K + ((theta - np.sin(theta)) / rate) * K2
    return F, G


def ekf_init(pixel, depth: float, k: CameraIntrinsics, cfg: Optional[EkfConfig] = None) -> EkfState:
    """Initial point from a depth estimate and the back-projected pixel offsets."""
    cfg = cfg or EkfConfig()
    x = back_project(pixel, depth, k)
    ray = x / depth
    sigma_d = cfg.p0_depth_relative_std * depth
    P = np.diag(cfg.p0) + sigma_d ** 2 * np.outer(ray, ray)
    return EkfState(x, P)


def ekf_reanchor(s: EkfState, pixel, k: CameraIntrinsics, cfg: Optional[EkfConfig] = None) -> EkfState:
    """Keeps the depth estimate and moves the lateral/vertical offsets to a new feature mean."""
    cfg = cfg or EkfConfig()
    x = back_project(pixel, s.depth, k)
    ray = x / s.depth
    P = s.P[0, 0] * np.outer(ray, ray) + np.diag([0.0, cfg.p0[1], cfg.p0[2]])
    return EkfState(x, P)


def ekf_predict(s: EkfState, inp: EkfInputs, dt: float, cfg: Optional[EkfConfig] = None) -> EkfState:
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    cfg = cfg or EkfConfig()
    F, G = discretize(inp.omega, dt)
    Q = np.diag(cfg.q_c) * dt
    x, P = kalman_predict(s.x, s.P, F=F, Q=Q, u=np.asarray(inp.v_c, dtype=float), B=-G)
    return EkfState(x, 0.5 * (P + P.T))


def measurement(x: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    return np.array([k.u0 + k.focal_length * x[1] / x[0], k.v0 + k.focal_length * x[2] / x[0]])


def measurement_jacobian(x: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    x_c, y_c, z_c = x
    f = k.focal_length
    return np.array([[-f * y_c / x_c ** 2, f / x_c, 0.0],
                     [-f * z_c / x_c ** 2, 0.0, f / x_c]])


def ekf_update(s: EkfState, meas, k: CameraIntrinsics, cfg: Optional[EkfConfig] = None) -> Tuple[EkfState, EkfStepInfo]:
    cfg = cfg or EkfConfig()
    z = np.asarray(meas, dtype=float)
    H = measurement_jacobian(s.x, k)
    R = cfg.r_pixel * np.eye(2)
    innovation = z - measurement(s.x, k)
    S = H @ s.P @ H.T + R
    d2 = float(innovation @ np.linalg.solve(S, innovation))
    if d2 > gate_threshold(cfg):
        logger.warning(f"EKF gate rejected measurement {z.round(2).tolist()} (d2={d2:.2f})")
        return s, EkfStepInfo(innovation, d2, True, False)
    # Linearized update: H x + innovation plays the role of the measurement
    x, P = kalman_update(s.x, s.P, H @ s.x + innovation, R, H)
    floored = bool(x[0] < cfg.min_depth)
    if floored:
        logger.warning(f"EKF depth {x[0]:.4f} m clamped to {cfg.min_depth} m")
        x = x.copy()
        x[0] = cfg.min_depth
    return EkfState(x, 0.5 * (P + P.T)), EkfStepInfo(innovation, d2, False, floored)
