# core/planning.py
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import DegenerateIntervalError

logger = logging.getLogger("planning")

MIN_INTERVAL = 1e-6
EQUIVALENCE_TOL = 1e-9

# Boundary constraints on normalized coefficients a(s), s = (t - t0)/T:
# p(0), T v(0), p(1), T v(1)
_A = np.array([[1.0, 0.0, 0.0, 0.0],
               [0.0, 1.0, 0.0, 0.0],
               [1.0, 1.0, 1.0, 1.0],
               [0.0, 1.0, 2.0, 3.0]])
# Normalized acceleration Gram matrix: integral over [0, 1] of b b^T, b = (0, 0, 2, 6 s)
_G_UNIT = np.array([[0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 4.0, 6.0],
                    [0.0, 0.0, 6.0, 12.0]])


@dataclass(frozen=True)
class BoundaryConditions:
    p0: np.ndarray
    pf: np.ndarray
    v0: np.ndarray
    vf: np.ndarray

    @classmethod
    def rest_to_rest(cls, p0, pf) -> "BoundaryConditions":
        return cls(np.asarray(p0, dtype=float), np.asarray(pf, dtype=float), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class CubicTrajectory:
    coeffs: np.ndarray # (3, 4): per-axis c0..c3 in powers of (t - t0)
    t0: float
    tf: float

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    @property
    def start(self) -> np.ndarray:
        return self.coeffs[:, 0].copy()

    @property
    def end(self) -> np.ndarray:
        return evaluate(self, self.tf).position


class TrajectorySample(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    clamped: bool


def gram_matrix(duration: float) -> np.ndarray:
    """Integral of b(t) b(t)^T over [t0, t0 + T] with b = (0, 0, 2, 6 (t - t0))."""
    T = duration
    G = np.zeros((4, 4))
    G[2, 2] = 4.0 * T
    G[2, 3] = G[3, 2] = 6.0 * T ** 2
    G[3, 3] = 12.0 * T ** 3
    return G


def acceleration_cost(traj: CubicTrajectory) -> float:
    G = gram_matrix(traj.duration)
    return float(sum(c @ G @ c for c in traj.coeffs))


def _boundary_rhs(bc: BoundaryConditions, T: float) -> np.ndarray:
    return np.vstack((bc.p0, T * np.asarray(bc.v0, dtype=float), bc.pf, T * np.asarray(bc.vf, dtype=float)))


def plan_cubic(bc: BoundaryConditions, t0: float, tf: float) -> CubicTrajectory:
    """Minimum-acceleration cubic per axis from the KKT system of the equality-constrained QP.

    With four boundary constraints on four coefficients the optimum must coincide with
    plain interpolation; the two solutions are cross-checked.
    """
    T = tf - t0
    if not T >= MIN_INTERVAL:
        raise DegenerateIntervalError(f"interval {T:.3g} s shorter than {MIN_INTERVAL} s")
    b = _boundary_rhs(bc, T) # (4, 3): one column per axis
    kkt = np.block([[2.0 * _G_UNIT, _A.T], [_A, np.zeros((4, 4))]])
    rhs = np.vstack((np.zeros((4, 3)), b))
    try:
        a_qp = np.linalg.solve(kkt, rhs)[:4]
    except np.linalg.LinAlgError as e:
        raise DegenerateIntervalError(f"singular KKT system: {e}") from e
    a_interp = np.linalg.solve(_A, b)
    scale = max(1.0, float(np.abs(a_interp).max()))
    if not np.allclose(a_qp, a_interp, rtol=0.0, atol=EQUIVALENCE_TOL * scale):
        raise ArithmeticError("KKT solution deviates from boundary interpolation")
    powers = T ** np.arange(4)
    coeffs = (a_qp / powers[:, None]).T
    return CubicTrajectory(coeffs, float(t0), float(tf))


def evaluate(traj: CubicTrajectory, t: float) -> TrajectorySample:
    """Position, velocity and acceleration at t; times outside [t0, tf] are clamped and flagged."""
    clamped = t < traj.t0 or t > traj.tf
    tau = min(max(t, traj.t0), traj.tf) - traj.t0
    c = traj.coeffs
    pos = c[:, 0] + tau * (c[:, 1] + tau * (c[:, 2] + tau * c[:, 3]))
    vel = c[:, 1] + tau * (2.0 * c[:, 2] + 3.0 * tau * c[:, 3])
    acc = 2.0 * c[:, 2] + 6.0 * tau * c[:, 3]
    return TrajectorySample(pos, vel, acc, clamped)


def peak_acceleration(traj: CubicTrajectory) -> np.ndarray:
    """Per-axis max |acceleration|; linear in time, so attained at an endpoint."""
    a0 = np.abs(evaluate(traj, traj.t0).acceleration)
    af = np.abs(evaluate(traj, traj.tf).acceleration)
    return np.maximum(a0, af)


def choose_duration(bc: BoundaryConditions, a_max: float, v_cruise: float = 1.0, floor: float = 0.5,
                    growth: float = 1.25, max_steps: int = 200) -> float:
    if a_max <= 0:
        raise ValueError(f"a_max must be > 0, got {a_max}")
    distance = float(np.linalg.norm(np.asarray(bc.pf) - np.asarray(bc.p0)))
    T = max(distance / v_cruise, floor)
    for _ in range(max_steps):
        if np.all(peak_acceleration(plan_cubic(bc, 0.0, T)) <= a_max * (1.0 + 1e-12)):
            return T
        T *= growth
    logger.warning(f"No feasible duration within {max_steps} growth steps; using {T:.3f} s")
    return T


def plan_waypoints(points: Sequence[np.ndarray], times: Sequence[float],
                   v_start: Optional[np.ndarray] = None, v_end: Optional[np.ndarray] = None) -> List[CubicTrajectory]:
    """Chains per-segment cubics through waypoints with continuous velocity.

    Interior velocities are the time-weighted average of the adjacent chord velocities.
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    if len(pts) != len(times) or len(pts) < 2:
        raise ValueError("need matching waypoints and times, at least two of each")
    chords = [(pts[i + 1] - pts[i]) / (times[i + 1] - times[i]) for i in range(len(pts) - 1)]
    vel = [np.zeros(3) if v_start is None else np.asarray(v_start, dtype=float)]
    for i in range(1, len(pts) - 1):
        w0, w1 = times[i] - times[i - 1], times[i + 1] - times[i]
        vel.append((w1 * chords[i - 1] + w0 * chords[i]) / (w0 + w1))
    vel.append(np.zeros(3) if v_end is None else np.asarray(v_end, dtype=float))
    return [plan_cubic(BoundaryConditions(pts[i], pts[i + 1], vel[i], vel[i + 1]), times[i], times[i + 1])
            for i in range(len(pts) - 1)]


def evaluate_segments(segments: Sequence[CubicTrajectory], t: float) -> TrajectorySample:
    for seg in segments:
        if t <= seg.tf:
            return evaluate(seg, t)
    return evaluate(segments[-1], t)
