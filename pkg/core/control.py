# core/control.py
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from models.models import GainsConfig
from .exceptions import EstimatorNotReadyError
from .planning import CubicTrajectory, evaluate
from .quad_dynamics import ControlInput, QuadParams, QuadState, vee

logger = logging.getLogger("control")

E3 = np.array([0.0, 0.0, 1.0])
FRENET_EPS = 1e-9
MIN_ALTITUDE_DELTA = 1e-3 # m; smaller altimeter differences are not PBVS samples


class HoverSetpoint(NamedTuple):
    position: np.ndarray
    yaw: float


def frenet_frame(traj: CubicTrajectory, t: float) -> np.ndarray:
    """Rows are (tangent, normal, binormal) of the desired path at t.

    Rest points and straight segments fall back to the chord direction and
    world-z x tangent; a zero-length path gives the world axes.
    """
    sample = evaluate(traj, t)
    speed = float(np.linalg.norm(sample.velocity))
    if speed > FRENET_EPS:
        tangent = sample.velocity / speed
    else:
        chord = traj.end - traj.start
        length = float(np.linalg.norm(chord))
        if length <= FRENET_EPS:
            return np.eye(3)
        tangent = chord / length
    normal = sample.acceleration - (sample.acceleration @ tangent) * tangent
    if speed <= FRENET_EPS or np.linalg.norm(normal) <= FRENET_EPS:
        normal = np.cross(E3, tangent)
        if np.linalg.norm(normal) <= FRENET_EPS:
            normal = np.cross(np.array([1.0, 0.0, 0.0]), tangent)
    normal = normal / np.linalg.norm(normal)
    return np.vstack((tangent, normal, np.cross(tangent, normal)))


def drag_feedforward(state: QuadState, params: QuadParams) -> np.ndarray:
    v = state.v
    return (state.R @ params.drag @ state.R.T @ v) * np.linalg.norm(v) / params.mass


def desired_attitude(a_des: np.ndarray, yaw: float, gravity: float) -> np.ndarray:
    """Body z opposes the specific force a_des - g z_g (NED thrust points along -body z)."""
    f = a_des - gravity * E3
    norm = float(np.linalg.norm(f))
    b3 = -f / norm if norm > FRENET_EPS else E3.copy()
    b1c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    b2 = np.cross(b3, b1c)
    if np.linalg.norm(b2) <= FRENET_EPS:
        b2 = np.cross(b3, np.array([-np.sin(yaw), np.cos(yaw), 0.0]))
    b2 = b2 / np.linalg.norm(b2)
    b1 = np.cross(b2, b3)
    return np.column_stack((b1, b2, b3))


def attitude_error(R: np.ndarray, R_des: np.ndarray) -> np.ndarray:
    return 0.5 * vee(R_des.T @ R - R.T @ R_des)


def attitude_and_thrust(a_des: np.ndarray, yaw: float, state: QuadState, gains: GainsConfig,
                        params: QuadParams, frenet_error: Optional[np.ndarray] = None) -> ControlInput:
    """Thrust magnitude and attitude torques realizing a_des with heading yaw."""
    thrust_raw = params.mass * float(np.linalg.norm(a_des - params.gravity * E3))
    thrust = float(np.clip(thrust_raw, 0.0, params.thrust_max))
    R_des = desired_attitude(a_des, yaw, params.gravity)
    tau_raw = -gains.k_r * attitude_error(state.R, R_des) - gains.k_omega * state.omega
    tau = np.clip(tau_raw, -params.torque_max, params.torque_max)
    thrust_sat = thrust != thrust_raw
    torque_sat = bool(np.any(tau != tau_raw))
    if thrust_sat:
        logger.debug(f"Thrust saturated: {thrust_raw:.3f} N clamped to {thrust:.3f} N")
    return ControlInput(thrust, tau, np.asarray(a_des, dtype=float).copy(),
                        np.zeros(3) if frenet_error is None else frenet_error, thrust_sat, torque_sat)


def path_follow(state: QuadState, traj: CubicTrajectory, t: float, gains: GainsConfig,
                params: QuadParams, yaw: float = 0.0) -> ControlInput:
    """Geometric tracking with position/velocity errors weighted per Frenet direction."""
    ref = evaluate(traj, t)
    E = frenet_frame(traj, t)
    e_pos = E @ (state.r - ref.position)
    e_vel = E @ (state.v - ref.velocity)
    feedback = -E.T @ (np.asarray(gains.k_pos) * e_pos + np.asarray(gains.k_vel) * e_vel)
    a_des = ref.acceleration + feedback
    if gains.drag_feedforward:
        a_des = a_des + drag_feedforward(state, params)
    return attitude_and_thrust(a_des, yaw, state, gains, params, e_pos)


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    filtered_setpoint: Optional[np.ndarray] = None

    def reset(self) -> None:
        self.integral = np.zeros(3)
        self.filtered_setpoint = None


def hover_pid(state: QuadState, setpoint: HoverSetpoint, gains: GainsConfig, params: QuadParams,
              dt: float, pid: Optional[PidState] = None) -> ControlInput:
    """Per-axis PID on position (derivative on measured velocity) for near-hover flight.

    `pid` is updated in place. With the setpoint prefilter on, the reference passes a
    first-order lag with time constant kp/ki per axis before entering the loop.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    pid = pid if pid is not None else PidState()
    kp, ki, kd = (np.asarray(g, dtype=float) for g in (gains.hover_kp, gains.hover_ki, gains.hover_kd))
    target = np.asarray(setpoint.position, dtype=float)
    if not gains.setpoint_prefilter:
        reference = target
    else:
        if pid.filtered_setpoint is None:
            pid.filtered_setpoint = state.r.copy()
        rate = np.divide(ki, kp, out=np.full(3, np.inf), where=kp > 0)
        alpha = 1.0 - np.exp(-rate * dt)
        pid.filtered_setpoint = pid.filtered_setpoint + alpha * (target - pid.filtered_setpoint)
        reference = pid.filtered_setpoint

    error = reference - state.r
    pid.integral = np.clip(pid.integral + error * dt, -gains.integrator_limit, gains.integrator_limit)
    a_des = kp * error + ki * pid.integral - kd * state.v
    if gains.drag_feedforward:
        a_des = a_des + drag_feedforward(state, params)
    return attitude_and_thrust(a_des, setpoint.yaw, state, gains, params, -error)


@dataclass(frozen=True)
class PbvsEstimator:
    """Pixels-per-meter gain from consecutive (pixel, altitude) hover readings."""
    m_required: int = 5
    band: float = 0.02
    samples: Tuple[Tuple[float, float], ...] = () # (d_pixel, d_altitude)
    estimates: Tuple[float, ...] = () # running lambda after each accepted sample
    reference: Optional[Tuple[float, float]] = None # last (y_p, altitude)
    converged: bool = False

    @property
    def lambda_px_per_m(self) -> Optional[float]:
        return self.estimates[-1] if self.estimates else None


def pbvs_collect(est: PbvsEstimator, y_p: float, v0: float, altitude: float) -> PbvsEstimator:
    """Adds one hover reading; y_p is measured against v0 so only its differences matter."""
    offset = y_p - v0
    if est.reference is None:
        return replace(est, reference=(offset, altitude))
    d_alt = altitude - est.reference[1]
    if abs(d_alt) < MIN_ALTITUDE_DELTA:
        logger.debug(f"PBVS sample discarded: altitude change {d_alt:.2e} m")
        return est
    d_pix = offset - est.reference[0]
    samples = est.samples + ((d_pix, d_alt),)
    lam = float(np.mean([p / a for p, a in samples]))
    estimates = est.estimates + (lam,)
    # consistency is judged on the raw ratios; zero pixel steps carry no gain information
    ratios = [p / a for p, a in samples if p != 0.0]
    converged = False
    if len(ratios) >= est.m_required:
        window = np.asarray(ratios[-est.m_required:])
        centre = float(np.mean(window))
        converged = bool(np.isfinite(lam) and centre != 0.0
                         and window.max() - window.min() < est.band * abs(centre))
    logger.debug(f"PBVS sample {len(samples)}: d_pix={d_pix:.3f}, d_alt={d_alt:.3f}, lambda={lam:.4f}")
    return replace(est, samples=samples, estimates=estimates, reference=(offset, altitude), converged=converged)


def pbvs_command(est: PbvsEstimator, z_w: float, y_p: float, v0: float) -> float:
    """Vertical NED setpoint driving the image row error y_p - v0 to zero."""
    if not est.converged or est.lambda_px_per_m is None:
        raise EstimatorNotReadyError(f"lambda not converged after {len(est.samples)} samples")
    return z_w + (y_p - v0) / est.lambda_px_per_m
