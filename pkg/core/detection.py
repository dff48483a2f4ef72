# core/detection.py
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Collection, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from models.models import ConfidenceConfig, NoiseConfig, ObjectKind
from .exceptions import BladeFitError, InsufficientDataError, NoPeriodicityError
from .quad_dynamics import QuadState
from .raster_vision import NEAR_CLIP, GrayFrame, frame_difference
from .sensors import CameraIntrinsics, PixelPoint, project_many, world_to_camera
from .sim_world import BLADE_SYMMETRY, Scene, advance_scene, blade_angle, object_vertices

logger = logging.getLogger("detection")

MIN_BOX_PX = 4.0
MIN_AUTOCORRELATION = 0.5
MIN_MOTION_PIXELS = 200
MAST_EXCLUSION = math.radians(25.0)
RADIAL_BIN = math.radians(10.0)
RIM_FRACTION = 0.85
RIM_RESIDUAL_PX = 2.0


@dataclass(frozen=True)
class BBox:
    u: float
    v: float
    w: float
    h: float
    confidence: float
    object_class: ObjectKind
    timestamp: float = 0.0
    object_id: Optional[int] = None # scene index of the source object (simulation only)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def ratio(self) -> float:
        return self.w / self.h

    @property
    def top(self) -> float:
        return self.v - 0.5 * self.h

    def inflated(self, pad: float) -> "BBox":
        return replace(self, w=self.w + 2.0 * pad, h=self.h + 2.0 * pad)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        return ((np.abs(pts[:, 0] - self.u) <= 0.5 * self.w + tol)
                & (np.abs(pts[:, 1] - self.v) <= 0.5 * self.h + tol))


@dataclass(frozen=True)
class ConfidenceModel:
    c_min: float = 0.90
    c_max: float = 0.975
    peak_value: float = 0.974
    sharpness: float = 8.0
    period: float = 1.0 # seconds, (2 pi / 3) / omega_beta

    @classmethod
    def from_config(cls, cfg: ConfidenceConfig, omega_beta: float) -> "ConfidenceModel":
        period = BLADE_SYMMETRY / abs(omega_beta) if omega_beta else math.inf
        return cls(cfg.c_min, cfg.c_max, cfg.peak_value, cfg.sharpness, period)


@dataclass(frozen=True)
class BladeModel:
    beta: float # image-plane reference-blade angle at `timestamp`
    omega_beta: float
    blade_len_px: float # vertical rim semi-axis
    hub_px: PixelPoint
    timestamp: float = 0.0
    lateral_len_px: Optional[float] = None

    def at(self, t: float) -> "BladeModel":
        """Propagates the blade angle to time t (beta_dot = omega_beta)."""
        return replace(self, beta=self.beta + self.omega_beta * (t - self.timestamp), timestamp=t)


@dataclass(frozen=True)
class PeakPrediction:
    dt_next_peak: float
    confidence_at_query: float
    period: float


def confidence_model(beta: float, model: ConfidenceModel) -> float:
    # angular distance to the nearest 'Mercedes-Benz' phase
    d = abs(math.fmod(beta + 0.5 * BLADE_SYMMETRY, BLADE_SYMMETRY) % BLADE_SYMMETRY - 0.5 * BLADE_SYMMETRY)
    return model.c_min + (model.peak_value - model.c_min) * math.exp(-model.sharpness * d * d)


def detect(scene: Scene, quad: QuadState, k: CameraIntrinsics, noise: NoiseConfig, rng: np.random.Generator,
           confidence: Optional[ConfidenceConfig] = None, classes: Optional[Collection[ObjectKind]] = None) -> List[BBox]:
    """Simulated detector: projected-silhouette boxes with pixel noise and a phase-dependent confidence."""
    conf_cfg = confidence or ConfidenceConfig()
    boxes: List[BBox] = []
    for idx, obj in enumerate(scene.objects):
        if classes is not None and obj.kind not in classes:
            continue
        cam = world_to_camera(object_vertices(obj, scene.time), quad)
        if np.any(cam[:, 0] <= NEAR_CLIP):
            continue
        pix = project_many(cam, k)
        u_min, v_min = np.maximum(pix.min(axis=0), 0.0)
        u_max = min(pix[:, 0].max(), k.width - 1.0)
        v_max = min(pix[:, 1].max(), k.height - 1.0)
        if u_max - u_min < MIN_BOX_PX or v_max - v_min < MIN_BOX_PX:
            continue
        jitter = rng.normal(0.0, noise.pixel, 4)
        if obj.is_turbine:
            model = ConfidenceModel.from_config(conf_cfg, obj.turbine_params.blade_angular_velocity)
            c = confidence_model(blade_angle(obj, scene.time), model)
        else:
            c = conf_cfg.c_max
        c = float(np.clip(c + rng.normal(0.0, noise.confidence), 0.0, 1.0))
        boxes.append(BBox(u=0.5 * (u_min + u_max) + jitter[0], v=0.5 * (v_min + v_max) + jitter[1],
                          w=max(u_max - u_min + jitter[2], 1.0), h=max(v_max - v_min + jitter[3], 1.0),
                          confidence=c, object_class=obj.kind, timestamp=scene.time, object_id=idx))
    return boxes


def _parabolic_offset(y_prev: float, y0: float, y_next: float) -> float:
    denom = y_prev - 2.0 * y0 + y_next
    if denom == 0.0:
        return 0.0
    return float(np.clip(0.5 * (y_prev - y_next) / denom, -0.5, 0.5))


def estimate_period(times: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Returns (period, time of the most recent peak) of a uniformly sampled periodic series.

    The period comes from the unbiased autocorrelation of the detrended series and is
    refined by a linear fit through the sub-sample peak times.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 8:
        raise InsufficientDataError(f"need at least 8 samples, got {n}")
    dt = float(np.median(np.diff(t)))
    xd = signal.detrend(x)
    var = float(np.mean(xd * xd))
    if var < 1e-14:
        raise NoPeriodicityError("series has no variation")
    max_lag = n // 2
    ac = signal.correlate(xd, xd, mode="full", method="direct")[n - 1:n + max_lag]
    ac = ac / (var * (n - np.arange(len(ac))))
    below = np.nonzero(ac < 0.0)[0]
    if len(below) == 0:
        raise InsufficientDataError("no autocorrelation zero crossing within half the series")
    peaks, _ = signal.find_peaks(ac[below[0]:])
    if len(peaks) == 0:
        raise InsufficientDataError("series shorter than two periods")
    candidates = below[0] + peaks
    best = float(ac[candidates].max())
    # first strong peak, so noise cannot promote a multiple of the period
    lag = int(candidates[np.argmax(ac[candidates] >= 0.8 * best)])
    if ac[lag] < MIN_AUTOCORRELATION:
        raise NoPeriodicityError(f"autocorrelation peak {ac[lag]:.3f} below {MIN_AUTOCORRELATION}")
    refined_lag = lag + (_parabolic_offset(ac[lag - 1], ac[lag], ac[lag + 1]) if lag + 1 < len(ac) else 0.0)
    period = refined_lag * dt

    spacing = max(1, int(0.6 * period / dt))
    idx, _ = signal.find_peaks(x, distance=spacing, prominence=0.3 * float(np.ptp(x)))
    if len(idx) == 0:
        raise NoPeriodicityError("no local maxima in series")
    peak_times = np.array([t[i] + dt * _parabolic_offset(x[i - 1], x[i], x[i + 1]) for i in idx])
    if len(peak_times) >= 2:
        cycles = np.round((peak_times - peak_times[0]) / period)
        if np.ptp(cycles) > 0:
            slope, intercept = np.polyfit(cycles, peak_times, 1)
            period = float(slope)
            return period, float(intercept + slope * cycles[-1])
    return period, float(peak_times[-1])


def predict_time_to_peak(history: Sequence[Tuple[float, float]]) -> PeakPrediction:
    if len(history) < 2:
        raise InsufficientDataError("confidence history is empty")
    t, c = zip(*history)
    period, t_last = estimate_period(t, c)
    span = t[-1] - t[0]
    if span < 2.0 * period:
        raise InsufficientDataError(f"history spans {span:.3f} s, less than two periods of {period:.3f} s")
    elapsed = (t[-1] - t_last) % period
    dt_next = period - elapsed
    logger.debug(f"Confidence period {period:.4f} s, next peak in {dt_next:.4f} s")
    return PeakPrediction(float(dt_next), float(c[-1]), float(period))


HoverFn = Callable[[float], Tuple[Scene, QuadState]]


def active_detect(scene: Scene, quad: QuadState, k: CameraIntrinsics, history: Sequence[Tuple[float, float]],
                  rng: np.random.Generator, noise: Optional[NoiseConfig] = None,
                  confidence: Optional[ConfidenceConfig] = None, target_id: Optional[int] = None,
                  hover: Optional[HoverFn] = None, time_step: float = 0.01) -> Tuple[Optional[BBox], Optional[PeakPrediction]]:
    """Waits for the predicted confidence peak, then re-detects.

    `hover(duration)` advances the closed-loop world and returns the new (scene, quad);
    without it the quad is held still while the scene advances. Aperiodic targets are
    detected immediately and no prediction is returned.
    """
    noise = noise or NoiseConfig()
    try:
        prediction = predict_time_to_peak(history)
    except NoPeriodicityError:
        logger.info("No confidence periodicity; falling back to immediate detection")
        prediction = None
    if prediction is not None:
        wait = round(prediction.dt_next_peak / time_step) * time_step
        if hover is not None:
            scene, quad = hover(wait)
        else:
            scene = advance_scene(scene, wait)
    boxes = detect(scene, quad, k, noise, rng, confidence)
    if target_id is not None:
        boxes = [b for b in boxes if b.object_id == target_id]
    best = max(boxes, key=lambda b: b.confidence, default=None)
    if best is not None:
        logger.info(f"Active detection at t={scene.time:.3f} s, confidence {best.confidence:.4f}")
    return best, prediction


def blade_tip(model: BladeModel) -> PixelPoint:
    return PixelPoint(model.hub_px.u + model.blade_len_px * math.sin(model.beta),
                      model.hub_px.v - model.blade_len_px * math.cos(model.beta))


def motion_pixels_in(bbox: BBox, mask: GrayFrame) -> int:
    vs, us = np.nonzero(mask.pixels)
    if len(us) == 0:
        return 0
    return int(np.count_nonzero(bbox.contains(np.column_stack((us, vs)))))


def _blade_angles(us: np.ndarray, vs: np.ndarray, hub: Tuple[float, float]) -> np.ndarray:
    # beta convention: 0 straight up, pi/2 to the right
    return np.arctan2(us - hub[0], -(vs - hub[1]))


def _outside_mast(beta: np.ndarray) -> np.ndarray:
    return np.abs(np.angle(np.exp(1j * (beta - math.pi)))) > MAST_EXCLUSION


def _fit_rim(us: np.ndarray, vs: np.ndarray, hub: Tuple[float, float]) -> Tuple[float, float, float, float]:
    """Axis-aligned ellipse through the outermost motion pixels; returns (u_c, v_c, a_u, b_v)."""
    du, dv = us - hub[0], vs - hub[1]
    beta = _blade_angles(us, vs, hub)
    radius = np.hypot(du, dv)
    keep = _outside_mast(beta)
    bins = np.floor((beta[keep] + math.pi) / RADIAL_BIN).astype(int)
    r_keep, du_keep, dv_keep = radius[keep], du[keep], dv[keep]
    rim_u, rim_v = [], []
    for b in np.unique(bins):
        sel = np.nonzero(bins == b)[0]
        j = sel[np.argmax(r_keep[sel])]
        rim_u.append(du_keep[j])
        rim_v.append(dv_keep[j])
    rim_u, rim_v = np.array(rim_u), np.array(rim_v)
    r_rim = np.hypot(rim_u, rim_v)
    outer = r_rim >= RIM_FRACTION * r_rim.max()
    rim_u, rim_v = rim_u[outer], rim_v[outer]

    for _ in range(2):
        if len(rim_u) < 5:
            raise BladeFitError(f"only {len(rim_u)} rim points for the blade-circle fit")
        A = np.column_stack((rim_u ** 2, rim_v ** 2, rim_u, rim_v))
        (a2, c2, d, e), *_ = np.linalg.lstsq(A, np.ones(len(rim_u)), rcond=None)
        if a2 <= 0 or c2 <= 0:
            raise BladeFitError("rim points do not describe an ellipse")
        cu, cv = -d / (2.0 * a2), -e / (2.0 * c2)
        f = 1.0 + d * d / (4.0 * a2) + e * e / (4.0 * c2)
        semi_u, semi_v = math.sqrt(f / a2), math.sqrt(f / c2)
        rho = np.hypot((rim_u - cu) / semi_u, (rim_v - cv) / semi_v)
        inliers = np.abs(rho - 1.0) * semi_v <= RIM_RESIDUAL_PX
        if inliers.all():
            break
        rim_u, rim_v = rim_u[inliers], rim_v[inliers]
    return hub[0] + cu, hub[1] + cv, semi_u, semi_v


def _three_fold_phase(mask: np.ndarray, hub: Tuple[float, float], radius: float) -> Optional[float]:
    vs, us = np.nonzero(mask)
    if len(us) == 0:
        return None
    beta = _blade_angles(us, vs, hub)
    r = np.hypot(us - hub[0], vs - hub[1])
    keep = _outside_mast(beta) & (r > 0.3 * radius) & (r <= 1.05 * radius)
    if np.count_nonzero(keep) < 10:
        return None
    z = np.sum(r[keep] * np.exp(3j * beta[keep]))
    if abs(z) < 1e-9:
        return None
    return float(np.angle(z) / 3.0)


def fit_blade_model(motion_masks: Sequence[GrayFrame], frames: Sequence[GrayFrame] = (),
                    omega_prior: Optional[float] = None, threshold: float = 40.0) -> BladeModel:
    """Image-plane blade kinematics from a series of frame-difference masks.

    Hub and blade length come from the rim of the swept region, omega from the period of
    the top-most motion signal (falling back to the pairwise phase rate, then the prior),
    and beta from the three-fold angular phase of the latest mask.
    """
    masks = list(motion_masks)
    masks += [frame_difference(b, a, threshold) for a, b in zip(frames[:-1], frames[1:])]
    masks.sort(key=lambda m: m.timestamp)
    if not masks:
        raise BladeFitError("no motion masks")
    union = np.zeros_like(masks[0].pixels, dtype=bool)
    for m in masks:
        union |= m.pixels > 0
    vs, us = np.nonzero(union)
    if len(us) < MIN_MOTION_PIXELS:
        raise BladeFitError(f"only {len(us)} motion pixels, need {MIN_MOTION_PIXELS}")

    hub0 = (float(us.mean()), float(vs.mean()))
    hub_u, hub_v, semi_u, semi_v = _fit_rim(us, vs, hub0)
    hub_u, hub_v, semi_u, semi_v = _fit_rim(us, vs, (hub_u, hub_v))
    hub = (hub_u, hub_v)

    times = np.array([m.timestamp for m in masks])
    frame_dt = float(np.median(np.diff(times))) if len(times) > 1 else 0.08
    mid_times = times - 0.5 * frame_dt

    phases = [_three_fold_phase(m.pixels, hub, semi_v) for m in masks]
    rates = []
    for (p0, t0), (p1, t1) in zip(zip(phases[:-1], mid_times[:-1]), zip(phases[1:], mid_times[1:])):
        if p0 is not None and p1 is not None and t1 > t0:
            rates.append(float(np.angle(np.exp(3j * (p1 - p0)))) / 3.0 / (t1 - t0))
    direction = 1.0
    if rates:
        direction = 1.0 if np.median(rates) >= 0 else -1.0
    elif omega_prior:
        direction = math.copysign(1.0, omega_prior)

    omega = None
    top = []
    for m in masks:
        rows = np.nonzero(m.pixels.any(axis=1))[0]
        top.append(-float(rows.min()) if len(rows) else np.nan)
    top = np.array(top)
    valid = np.isfinite(top)
    if valid.all():
        try:
            period, _ = estimate_period(mid_times, top)
            if mid_times[-1] - mid_times[0] >= 2.0 * period:
                omega = direction * BLADE_SYMMETRY / period
        except (InsufficientDataError, NoPeriodicityError) as e:
            logger.debug(f"Top-signal period unavailable: {e}")
    if omega is None and len(rates) >= 3:
        omega = float(np.median(rates))
    if omega is None:
        if omega_prior is None:
            raise BladeFitError("blade speed not observable and no prior given")
        omega = float(omega_prior)

    beta = 0.0
    for m, p, t_mid in zip(reversed(masks), reversed(phases), reversed(mid_times)):
        if p is not None:
            beta = p + omega * (m.timestamp - t_mid)
            break
    beta = float(np.mod(beta, BLADE_SYMMETRY))
    logger.debug(f"Blade fit: hub=({hub_u:.2f}, {hub_v:.2f}) l_b={semi_v:.2f}px omega={omega:.4f} beta={beta:.4f}")
    return BladeModel(beta, float(omega), float(semi_v), PixelPoint(hub_u, hub_v), float(masks[-1].timestamp), float(semi_u))
