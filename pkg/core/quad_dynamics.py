# core/quad_dynamics.py
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import polar

from models.models import QuadParamsConfig
from .exceptions import NumericalFault

logger = logging.getLogger("quad_dynamics")

Z_G = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class QuadState:
    r: np.ndarray # position, NED
    v: np.ndarray # world-frame velocity
    R: np.ndarray # body -> world
    omega: np.ndarray # body rates

    @classmethod
    def at_rest(cls, position, yaw: float = 0.0) -> "QuadState":
        return cls(np.asarray(position, dtype=float).copy(), np.zeros(3), yaw_matrix(yaw), np.zeros(3))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))
                    and np.all(np.isfinite(self.R)) and np.all(np.isfinite(self.omega)))


@dataclass(frozen=True)
class ControlInput:
    thrust: float
    torques: np.ndarray
    # Telemetry, filled by the controllers
    a_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frenet_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thrust_saturated: bool = False
    torque_saturated: bool = False


@dataclass(frozen=True)
class QuadParams:
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.02]))
    drag: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1, 0.1]))
    gravity: float = 9.81
    thrust_max: float = 4.0 * 9.81
    torque_max: float = 0.2

    @classmethod
    def from_config(cls, cfg: QuadParamsConfig) -> "QuadParams":
        t_max = cfg.thrust_max if cfg.thrust_max is not None else 4.0 * cfg.mass * cfg.gravity
        return cls(cfg.mass, np.diag(cfg.inertia), np.diag(cfg.drag), cfg.gravity, t_max, cfg.torque_max)

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity


class StateDerivative(NamedTuple):
    r_dot: np.ndarray
    v_dot: np.ndarray
    R_dot: np.ndarray
    omega_dot: np.ndarray


def hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def derivatives(state: QuadState, u: ControlInput, params: QuadParams) -> StateDerivative:
    R, v, w = state.R, state.v, state.omega
    thrust_vec = np.array([0.0, 0.0, u.thrust])
    # Quadratic drag -(1/m) R D R^T v |v|, opposing the velocity
    drag = R @ params.drag @ R.T @ v * np.linalg.norm(v)
    v_dot = -(R @ thrust_vec) / params.mass - drag / params.mass + params.gravity * Z_G
    R_dot = R @ hat(w)
    I = params.inertia
    omega_dot = np.linalg.solve(I, np.asarray(u.torques, dtype=float) - np.cross(w, I @ w))
    return StateDerivative(v.copy(), v_dot, R_dot, omega_dot)


def _shifted(state: QuadState, k: StateDerivative, h: float) -> QuadState:
    return QuadState(state.r + h * k.r_dot, state.v + h * k.v_dot, state.R + h * k.R_dot, state.omega + h * k.omega_dot)


def step(state: QuadState, u: ControlInput, params: QuadParams, dt: float) -> QuadState:
    """One RK4 step followed by polar re-orthonormalization of R."""
    if not 0.0 < dt <= 0.01:
        raise ValueError(f"dt must be in (0, 0.01], got {dt}")
    if u.thrust > params.thrust_max * (1.0 + 1e-12) or u.thrust < 0.0:
        raise ValueError(f"thrust {u.thrust:.6g} outside [0, {params.thrust_max:.6g}]")

    k1 = derivatives(state, u, params)
    k2 = derivatives(_shifted(state, k1, 0.5 * dt), u, params)
    k3 = derivatives(_shifted(state, k2, 0.5 * dt), u, params)
    k4 = derivatives(_shifted(state, k3, dt), u, params)

    def combine(a, b, c, d):
        return (a + 2.0 * b + 2.0 * c + d) * (dt / 6.0)

    R_new = state.R + combine(k1.R_dot, k2.R_dot, k3.R_dot, k4.R_dot)
    if not np.all(np.isfinite(R_new)):
        raise NumericalFault("non-finite attitude after RK4 step")
    R_new, _ = polar(R_new)
    new = QuadState(state.r + combine(k1.r_dot, k2.r_dot, k3.r_dot, k4.r_dot),
                    state.v + combine(k1.v_dot, k2.v_dot, k3.v_dot, k4.v_dot),
                    R_new,
                    state.omega + combine(k1.omega_dot, k2.omega_dot, k3.omega_dot, k4.omega_dot))
    if not new.is_finite():
        logger.error(f"Integrator blow-up: r={new.r}, v={new.v}, omega={new.omega}")
        raise NumericalFault("non-finite state after RK4 step")
    return new


def yaw_of(R: np.ndarray) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))
