# core/mission.py
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from models.models import MissionReport, ObjectKind, PhaseRecord, Scenario
from .config import Settings
from .control import PbvsEstimator, pbvs_collect, pbvs_command
from .detection import (BBox, BladeModel, active_detect, blade_tip, fit_blade_model, motion_pixels_in)
from .ekf_loc import EkfInputs, ekf_init, ekf_predict, ekf_reanchor, ekf_update
from .exceptions import (BladeFitError, MetricError, PhaseFailure, SimulationError, UnreliableDepthError)
from .raster_vision import GrayFrame, canny, frame_difference
from .sensors import CameraIntrinsics, SensorBundle, back_project, body_velocity, pixel_ray
from .sim_world import BLADE_SYMMETRY, plane_depth_along_ray
from .simulator import Simulator
from .tracking import ObjectTracker

logger = logging.getLogger("mission")

MIN_BOX_HEIGHT_PX = 4.0
SWEPT_BOX_PAD_PX = 4.0
CONTOUR_PAD_PX = 3.0
MIN_TIP_WINDOW_FRAMES = 10
MAX_TIP_WINDOW_PERIODS = 6
MIN_CLIMB_ALTITUDE = 1.0 # m above ground


class MissionPhase(str, Enum):
    DETECT = "Detect"
    ACTIVE_INFERENCE = "ActiveInference"
    PLANAR_APPROACH = "PlanarApproach"
    CLIMB = "Climb"
    LAMBDA_ESTIMATION = "LambdaEstimation"
    BLADE_ALIGN = "BladeAlign"
    HEIGHT_MEASURE = "HeightMeasure"
    DEPTH_ESTIMATE = "DepthEstimate"
    TRAJECTORY_TRACK = "TrajectoryTrack"
    DONE = "Done"
    FAILED = "Failed"


_P = MissionPhase
PHASE_GRAPH: Dict[MissionPhase, frozenset] = {
    _P.DETECT: frozenset({_P.ACTIVE_INFERENCE, _P.PLANAR_APPROACH}),
    _P.ACTIVE_INFERENCE: frozenset({_P.PLANAR_APPROACH}),
    _P.PLANAR_APPROACH: frozenset({_P.CLIMB, _P.LAMBDA_ESTIMATION}),
    _P.CLIMB: frozenset({_P.HEIGHT_MEASURE}),
    _P.LAMBDA_ESTIMATION: frozenset({_P.BLADE_ALIGN}),
    _P.BLADE_ALIGN: frozenset({_P.HEIGHT_MEASURE}),
    _P.HEIGHT_MEASURE: frozenset({_P.DEPTH_ESTIMATE}),
    _P.DEPTH_ESTIMATE: frozenset({_P.TRAJECTORY_TRACK}),
    _P.TRAJECTORY_TRACK: frozenset({_P.DONE}),
    _P.DONE: frozenset(),
    _P.FAILED: frozenset(),
}
TERMINAL = frozenset({_P.DONE, _P.FAILED})


class HeightMethod(str, Enum):
    CONTOUR_ALIGN = "ContourAlign"
    BLADE_ALIGN = "BladeAlign"


@dataclass(frozen=True)
class HeightEstimate:
    object_height: float
    method: HeightMethod
    samples: int
    altitude: float # hover-averaged altimeter reading at termination
    v_top: float # top point image row at termination
    lambda_px_per_m: Optional[float] = None


@dataclass(frozen=True)
class DepthEstimate:
    x_c_initial: float
    x_c_refined: Optional[float] = None


class PhaseTracker:
    """Records phase timings and rejects transitions outside the phase graph."""

    def __init__(self):
        self.records: List[PhaseRecord] = []
        self.current: Optional[MissionPhase] = None
        self._t_start = 0.0

    def enter(self, phase: MissionPhase, t: float) -> None:
        if self.current is not None:
            if self.current in TERMINAL:
                raise ValueError(f"phase {self.current.value} is terminal")
            if phase != _P.FAILED and phase not in PHASE_GRAPH[self.current]:
                raise ValueError(f"illegal transition {self.current.value} -> {phase.value}")
            self.records.append(PhaseRecord(phase=self.current.value, t_start=self._t_start, t_end=t))
        logger.info(f"Phase {phase.value} at t={t:.2f} s")
        self.current = phase
        self._t_start = t
        if phase in TERMINAL:
            self.records.append(PhaseRecord(phase=phase.value, t_start=t, t_end=t))

    @property
    def sequence(self) -> List[str]:
        return [r.phase for r in self.records]


# --- Pure mission operations ---

def desired_yaw(bbox: BBox, k: CameraIntrinsics) -> float:
    """Yaw increment that centers the detection horizontally."""
    return math.atan((bbox.u - k.u0) / k.focal_length)


def lowest_confidence_target(detections: Sequence[Sequence[BBox]], k: CameraIntrinsics,
                             noise_sigma: float = 0.0) -> int:
    """Object id with the lowest mean confidence.

    Means closer than three standard errors of the confidence noise count as tied; ties go to the
    smallest bearing from the camera axis, then the lowest id.
    """
    scores: Dict[int, List[float]] = {}
    last: Dict[int, BBox] = {}
    for boxes in detections:
        for b in boxes:
            scores.setdefault(b.object_id, []).append(b.confidence)
            last[b.object_id] = b
    if not scores:
        raise ValueError("no detections to choose from")
    means = {i: float(np.mean(c)) for i, c in scores.items()}
    lowest = min(means.values())
    band = 3.0 * noise_sigma / math.sqrt(min(len(c) for c in scores.values())) + 1e-12
    tied = [i for i, m in means.items() if m - lowest <= band]
    return min(tied, key=lambda i: (abs(desired_yaw(last[i], k)), i))


def planar_approach_step(k_iter: int, yaw: float, pos, unit: float = 1.0, max_step: float = math.inf) -> np.ndarray:
    if k_iter < 0:
        raise ValueError(f"k_iter must be >= 0, got {k_iter}")
    step = min(unit * 2.0 ** k_iter, max_step)
    return np.asarray(pos, dtype=float) + step * np.array([math.cos(yaw), math.sin(yaw), 0.0])


def proximity_stop(bbox: BBox, frame_area: float, threshold: float = 1.0 / 3.0) -> bool:
    """Rule of thirds on the linear size ratio sqrt(w h / frame area)."""
    return math.sqrt(max(bbox.area, 0.0) / frame_area) >= threshold


def height_from_alignment(altitude: float, v_top: float, v0: float, lambda_px_per_m: Optional[float]) -> float:
    """Altitude plus the back-projected residual of the top point (above v0 means taller)."""
    if not lambda_px_per_m:
        return altitude
    return altitude + (v0 - v_top) / lambda_px_per_m


def depth_from_height(height: HeightEstimate, bbox: BBox, k: CameraIntrinsics, z_w: float) -> DepthEstimate:
    """x_c from the object's vertical image extent.

    A box clipped at the bottom of the frame no longer spans the ground, so the top edge
    alone is used with the object top's height above the camera, H + z_w.
    """
    clipped = bbox.v + 0.5 * bbox.h >= k.height - 1.0
    if not clipped:
        if bbox.h < MIN_BOX_HEIGHT_PX:
            raise UnreliableDepthError(f"bbox height {bbox.h:.2f} px below {MIN_BOX_HEIGHT_PX} px")
        return DepthEstimate(k.focal_length * height.object_height / bbox.h)
    extent_px = k.v0 - bbox.top
    above = height.object_height + z_w
    if abs(extent_px) < MIN_BOX_HEIGHT_PX or above * extent_px <= 0:
        raise UnreliableDepthError(f"clipped bbox with top offset {extent_px:.2f} px gives no depth")
    return DepthEstimate(k.focal_length * above / extent_px)


def rmse(truth: Sequence[float], est: Sequence[float]) -> float:
    if len(truth) != len(est):
        raise MetricError(f"length mismatch: {len(truth)} truths vs {len(est)} estimates")
    if len(truth) == 0:
        raise MetricError("rmse of an empty sample")
    diff = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(diff * diff)))


def contour_top(frame: GrayFrame, bbox: BBox, k: CameraIntrinsics, low: float, high: float) -> Optional[float]:
    """Highest edge point among those horizontally closest (smallest decile) to the principal point."""
    pts = canny(frame, bbox.inflated(CONTOUR_PAD_PX), low, high).points
    if len(pts) == 0:
        return None
    offset = np.abs(pts[:, 0] - k.u0)
    central = pts[offset <= np.quantile(offset, 0.1)]
    return float(central[:, 1].min())


def next_peak_tip(blade: BladeModel) -> float:
    """Image row of the top blade tip at the next 'Mercedes-Benz' phase."""
    beta = float(np.mod(blade.beta, BLADE_SYMMETRY))
    if blade.omega_beta > 0:
        dt = (BLADE_SYMMETRY - beta) % BLADE_SYMMETRY / blade.omega_beta
    elif blade.omega_beta < 0:
        dt = beta / -blade.omega_beta
    else:
        dt = 0.0
    at_peak = blade.at(blade.timestamp + dt)
    upright = float(np.angle(np.exp(3j * at_peak.beta)) / 3.0)
    return blade_tip(replace(at_peak, beta=upright)).v


# --- Mission loop ---

@dataclass
class Observation:
    frames: List[GrayFrame] = field(default_factory=list)
    altitudes: List[float] = field(default_factory=list)
    boxes: List[Optional[BBox]] = field(default_factory=list)

    @property
    def altitude(self) -> float:
        return float(np.mean(self.altitudes))

    def last_box(self) -> Optional[BBox]:
        return next((b for b in reversed(self.boxes) if b is not None), None)

    def span_box(self, pad: float = 0.0) -> Optional[BBox]:
        """Smallest box holding every detection of the window."""
        boxes = [b for b in self.boxes if b is not None]
        if not boxes:
            return None
        lo_u = min(b.u - 0.5 * b.w for b in boxes) - pad
        hi_u = max(b.u + 0.5 * b.w for b in boxes) + pad
        lo_v = min(b.v - 0.5 * b.h for b in boxes) - pad
        hi_v = max(b.v + 0.5 * b.h for b in boxes) + pad
        return replace(boxes[-1], u=0.5 * (lo_u + hi_u), v=0.5 * (lo_v + hi_v), w=hi_u - lo_u, h=hi_v - lo_v)

    def masks(self, threshold: float, within: Optional[BBox] = None) -> List[GrayFrame]:
        masks = [frame_difference(b, a, threshold) for a, b in zip(self.frames[:-1], self.frames[1:])]
        if within is None:
            return masks
        keep = np.zeros_like(self.frames[0].pixels, dtype=bool)
        h, w = keep.shape
        u0 = max(0, int(np.floor(within.u - 0.5 * within.w)))
        v0 = max(0, int(np.floor(within.v - 0.5 * within.h)))
        keep[v0:min(h, int(np.ceil(within.v + 0.5 * within.h)) + 1),
             u0:min(w, int(np.ceil(within.u + 0.5 * within.w)) + 1)] = True
        return [GrayFrame(np.where(keep, m.pixels, 0).astype(np.uint8), m.timestamp) for m in masks]


def swept_centroid_row(masks: Sequence[GrayFrame]) -> float:
    union = np.zeros_like(masks[0].pixels, dtype=bool)
    for m in masks:
        union |= m.pixels > 0
    rows = np.nonzero(union)[0]
    if len(rows) == 0:
        raise BladeFitError("no blade motion inside the target box")
    return float(rows.mean())


class MissionRunner:
    """Executes the phase graph for one scenario and collects the report."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None, cfg: Optional[Settings] = None,
                 frame_sink=None):
        self.scenario = scenario
        self.sim = Simulator(scenario, seed, cfg)
        self.sim.frame_sink = frame_sink
        self.mission = scenario.mission
        self.kind = scenario.target_class
        self.k = self.sim.k
        self.phases = PhaseTracker()
        self.logs: Dict[str, List[dict]] = {name: [] for name in (
            "confidence", "pixel_error", "depth", "ekf", "track", "lambda", "climb")}
        self.target_id: Optional[int] = None
        self.history: List[tuple] = []
        self.omega_prior: Optional[float] = None
        self.depth_bbox: Optional[BBox] = None
        self.last_obs: Optional[Observation] = None
        self.report_fields: Dict[str, object] = {}

    # --- helpers ---

    def _target_box(self, boxes: Sequence[BBox]) -> Optional[BBox]:
        return next((b for b in boxes if b.object_id == self.target_id), None)

    def _observe(self, duration: float, record_confidence: bool = False) -> Observation:
        obs = Observation()

        def on_frame(sim: Simulator) -> None:
            frame = sim.capture()
            bundle = sim.sense()
            box = self._target_box(sim.detect([self.kind]))
            obs.frames.append(frame)
            obs.altitudes.append(bundle.altitude)
            obs.boxes.append(box)
            if record_confidence and box is not None:
                self.history.append((box.timestamp, box.confidence))
                self.logs["confidence"].append({"t": box.timestamp, "value": box.confidence, "series": "standard"})

        self.sim.hover(duration, on_frame=on_frame)
        if not obs.frames:
            raise PhaseFailure("no-frames", f"no perception frame within {duration:.2f} s")
        self.last_obs = obs
        return obs

    def _fly_to(self, target, yaw: Optional[float] = None, on_frame=None) -> None:
        self.sim.fly_to(target, yaw, on_frame=on_frame)

    def _true_depth(self, pixel) -> Optional[float]:
        obj = self.sim.scene.objects[self.target_id]
        ray = self.sim.quad.R @ pixel_ray(pixel, self.k)
        return plane_depth_along_ray(obj, self.sim.quad.r, ray)

    # --- phases ---

    def detect_phase(self) -> None:
        self.phases.enter(_P.DETECT, self.sim.time)
        window = self.mission.confidence_window_s if self.kind == ObjectKind.WIND_TURBINE else self.mission.observe_s
        frames: List[GrayFrame] = []
        detections: List[List[BBox]] = []

        def on_frame(sim: Simulator) -> None:
            frames.append(sim.capture())
            detections.append(sim.detect([self.kind]))

        self.sim.hover(window, on_frame=on_frame)
        seen = sorted({b.object_id for boxes in detections for b in boxes})
        if not seen:
            raise PhaseFailure("no-detection", f"no {self.kind.value} detected from the start position")

        if self.kind == ObjectKind.WIND_TURBINE:
            masks = [frame_difference(b, a, self.scenario.tracking.diff_threshold) for a, b in zip(frames[:-1], frames[1:])]
            motion = {i: 0 for i in seen}
            for mask, boxes in zip(masks, detections[1:]):
                for b in boxes:
                    motion[b.object_id] += motion_pixels_in(b, mask)
            if max(motion.values()) > 0:
                self.target_id = max(seen, key=lambda i: motion[i])
            else:
                last = {b.object_id: b for boxes in detections for b in boxes}
                self.target_id = max(seen, key=lambda i: last[i].area)
        else:
            self.target_id = lowest_confidence_target(detections, self.k, self.scenario.noise.confidence)

        for boxes in detections:
            box = self._target_box(boxes)
            if box is not None:
                self.history.append((box.timestamp, box.confidence))
                self.logs["confidence"].append({"t": box.timestamp, "value": box.confidence, "series": "standard"})
        logger.info(f"Target {self.kind.value} #{self.target_id} selected among {len(seen)} candidates")

    def _active_detection(self) -> BBox:
        best, prediction = active_detect(self.sim.scene, self.sim.quad, self.k, self.history,
                                         self.sim.rngs["detection"], self.scenario.noise, self.scenario.confidence,
                                         self.target_id, hover=self.sim.hover_for, time_step=self.sim.cfg.CONTROL_DT)
        if best is None:
            raise PhaseFailure("no-detection", "target lost during active detection")
        if prediction is not None:
            self.omega_prior = BLADE_SYMMETRY / prediction.period
        self.logs["confidence"].append({"t": best.timestamp, "value": best.confidence, "series": "active"})
        self.report_fields["active_confidence"] = best.confidence
        return best

    def active_inference_phase(self) -> BBox:
        self.phases.enter(_P.ACTIVE_INFERENCE, self.sim.time)
        return self._active_detection()

    def planar_approach_phase(self, bbox: Optional[BBox]) -> None:
        self.phases.enter(_P.PLANAR_APPROACH, self.sim.time)
        cfg = self.mission
        threshold = cfg.proximity_ratio
        if self.kind == ObjectKind.ELECTRIC_TOWER:
            threshold *= cfg.tower_ratio_scale
        for k_iter in range(cfg.approach_max_iterations + 1):
            if bbox is None:
                bbox = self._target_box(self.sim.detect([self.kind]))
            if bbox is None:
                raise PhaseFailure("target-lost", "target left the field of view during the approach")
            yaw = self.sim.yaw + desired_yaw(bbox, self.k)
            if proximity_stop(bbox, self.k.frame_area, threshold):
                if abs(bbox.u - self.k.u0) > cfg.align_tolerance_px:
                    self._fly_to(self.sim.hold.position, yaw)
                logger.info(f"Proximity reached after {k_iter} steps (box {bbox.w:.0f}x{bbox.h:.0f} px)")
                return
            if k_iter == cfg.approach_max_iterations:
                break
            setpoint = planar_approach_step(k_iter, yaw, self.sim.hold.position, cfg.approach_unit_m,
                                            cfg.approach_max_step_m)
            self._fly_to(setpoint, yaw)
            bbox = None
        raise PhaseFailure("approach-not-converged", f"no proximity stop within {cfg.approach_max_iterations} steps")

    def _capture_depth_bbox(self) -> Observation:
        """Confidence window at the approach end, then the peak-phase box used for depth."""
        self.history = []
        obs = self._observe(self.mission.confidence_window_s, record_confidence=True)
        self.depth_bbox = self._active_detection()
        return obs

    def climb_until_aligned(self) -> HeightEstimate:
        self.phases.enter(_P.CLIMB, self.sim.time)
        cfg = self.mission
        track = self.scenario.tracking
        v0 = self.k.v0
        est = PbvsEstimator(self.mission.lambda_m_required, self.mission.lambda_band)
        below: Optional[float] = None # NED z with the top still above v0
        above: Optional[float] = None # NED z that overshot
        doubling = 0
        lost_run = 0
        for _ in range(cfg.climb_max_iterations):
            obs = self._observe(cfg.observe_s)
            tops = []
            for frame, box in zip(obs.frames, obs.boxes):
                top = contour_top(frame, box, self.k, track.canny_low, track.canny_high) if box is not None else None
                lost_run = lost_run + 1 if top is None else 0
                if lost_run >= cfg.contour_lost_frames:
                    raise PhaseFailure("contour-lost", f"no contour for {lost_run} consecutive frames")
                if top is not None:
                    tops.append(top)
            if not tops:
                continue
            v_top = float(np.median(tops))
            z = float(self.sim.hold.position[2])
            est = pbvs_collect(est, v_top, v0, obs.altitude)
            self.logs["climb"].append({"t": self.sim.time, "z": z, "altitude": obs.altitude, "v_top": v_top,
                                       "bracket_below": below, "bracket_above": above})
            error = v_top - v0
            if abs(error) <= cfg.align_tolerance_px:
                if self.depth_bbox is None:
                    self.depth_bbox = obs.last_box()
                return HeightEstimate(height_from_alignment(obs.altitude, v_top, v0, est.lambda_px_per_m),
                                      HeightMethod.CONTOUR_ALIGN, len(est.samples) + 1, obs.altitude, v_top,
                                      est.lambda_px_per_m)
            if error < 0:
                below = z
            else:
                above = z
            if above is None:
                z_next = z - cfg.climb_unit_m * 2.0 ** doubling
                doubling += 1
            elif below is None:
                z_next = z + cfg.climb_unit_m * 2.0 ** doubling
                doubling += 1
            else:
                z_next = 0.5 * (below + above)
            z_next = min(z_next, -MIN_CLIMB_ALTITUDE)
            target = self.sim.hold.position.copy()
            target[2] = z_next
            self._fly_to(target)
        raise PhaseFailure("climb-not-converged", f"no alignment within {cfg.climb_max_iterations} setpoints")

    def _tip_window_frames(self) -> int:
        """Frame count whose sampled blade angles tile the three-fold symmetry uniformly."""
        dt = self.sim.cfg.PERCEPTION_DT
        period = BLADE_SYMMETRY / abs(self.omega_prior) if self.omega_prior else 1.0
        candidates = [m * period / dt for m in range(1, MAX_TIP_WINDOW_PERIODS + 1) if m * period / dt >= MIN_TIP_WINDOW_FRAMES]
        if not candidates:
            return MIN_TIP_WINDOW_FRAMES
        best = min(candidates, key=lambda n: abs(n - round(n)))
        return int(round(best))

    def _swept_centroid(self, obs: Observation) -> float:
        box = obs.span_box(SWEPT_BOX_PAD_PX)
        if box is None:
            raise PhaseFailure("target-lost", "no detection of the turbine while hovering")
        window = Observation(obs.frames[-self._tip_window_frames():])
        return swept_centroid_row(window.masks(self.scenario.tracking.diff_threshold, box))

    def _tip_row(self, obs: Observation, reference: Dict[str, float]) -> float:
        """Blade-tip row carried by the swept-region centroid shift since the first fit."""
        return reference["tip"] + (self._swept_centroid(obs) - reference["centroid"])

    def _observe_rotor(self) -> Observation:
        return self._observe(self._tip_window_frames() * self.sim.cfg.PERCEPTION_DT)

    def lambda_phase(self, first: Observation) -> tuple:
        self.phases.enter(_P.LAMBDA_ESTIMATION, self.sim.time)
        cfg = self.mission
        t_start = self.sim.time
        v0 = self.k.v0
        box = first.span_box(SWEPT_BOX_PAD_PX)
        masks = first.masks(self.scenario.tracking.diff_threshold, box)
        blade = fit_blade_model(masks, omega_prior=self.omega_prior)
        tip = next_peak_tip(blade)
        reference = {"tip": tip, "centroid": self._swept_centroid(first)}
        logger.info(f"Blade model: hub v={blade.hub_px.v:.2f}, l_b={blade.blade_len_px:.2f} px, "
                    f"omega={blade.omega_beta:.4f} rad/s, tip row {tip:.2f}")

        est = pbvs_collect(PbvsEstimator(cfg.lambda_m_required, cfg.lambda_band), tip, v0, first.altitude)
        y_p, altitude = tip, first.altitude
        while not est.converged:
            if self.sim.time - t_start > cfg.lambda_timeout_s:
                raise PhaseFailure("lambda-timeout", f"lambda not converged after {cfg.lambda_timeout_s:.0f} s")
            target = self.sim.hold.position.copy()
            target[2] -= cfg.lambda_step_m
            self._fly_to(target)
            obs = self._observe_rotor()
            y_p, altitude = self._tip_row(obs, reference), obs.altitude
            est = pbvs_collect(est, y_p, v0, altitude)
            if est.samples:
                d_pix, d_alt = est.samples[-1]
                self.logs["lambda"].append({"t": self.sim.time, "d_pixel": d_pix, "d_altitude": d_alt,
                                            "lambda": est.lambda_px_per_m, "converged": int(est.converged)})
        duration = self.sim.time - t_start
        self.report_fields["lambda_px_per_m"] = est.lambda_px_per_m
        self.report_fields["lambda_duration_s"] = duration
        logger.info(f"lambda={est.lambda_px_per_m:.4f} px/m after {len(est.samples)} samples, {duration:.1f} s")
        return est, reference, y_p, altitude

    def blade_align_phase(self, est: PbvsEstimator, reference: Dict[str, float], y_p: float,
                          altitude: float) -> HeightEstimate:
        self.phases.enter(_P.BLADE_ALIGN, self.sim.time)
        cfg = self.mission
        v0 = self.k.v0
        lam = est.lambda_px_per_m
        t_start = self.sim.time
        anchor = {"y_p": y_p, "altitude": altitude}

        def log_error(sim: Simulator) -> None:
            # in flight the tip row is extrapolated from the last measurement by lambda times the climb
            predicted = anchor["y_p"] + lam * (sim.sense().altitude - anchor["altitude"])
            self.logs["pixel_error"].append({"t": sim.time, "value": predicted - v0, "series": "predicted"})

        self.logs["pixel_error"].append({"t": t_start, "value": y_p - v0, "series": "measured"})
        while abs(y_p - v0) > cfg.align_tolerance_px:
            if self.sim.time - t_start > cfg.align_timeout_s:
                raise PhaseFailure("align-timeout", f"tip error {y_p - v0:.2f} px after {cfg.align_timeout_s:.0f} s")
            target = self.sim.hold.position.copy()
            target[2] = pbvs_command(est, -altitude, y_p, v0)
            self._fly_to(target, on_frame=log_error)
            obs = self._observe_rotor()
            y_p, altitude = self._tip_row(obs, reference), obs.altitude
            anchor.update(y_p=y_p, altitude=altitude)
            self.logs["pixel_error"].append({"t": self.sim.time, "value": y_p - v0, "series": "measured"})
        return HeightEstimate(height_from_alignment(altitude, y_p, v0, lam), HeightMethod.BLADE_ALIGN,
                              len(est.samples) + 1, altitude, y_p, lam)

    def blade_align_height(self) -> HeightEstimate:
        """Lambda estimation on the fitted blade tip, then PBVS alignment of the next-peak tip row."""
        first = self._capture_depth_bbox()
        est, reference, y_p, altitude = self.lambda_phase(first)
        return self.blade_align_phase(est, reference, y_p, altitude)

    def height_phase(self, height: HeightEstimate) -> HeightEstimate:
        self.phases.enter(_P.HEIGHT_MEASURE, self.sim.time)
        if not (height.object_height > 0 and math.isfinite(height.object_height)):
            raise PhaseFailure("invalid-height", f"height estimate {height.object_height}")
        truth = self.sim.scene.objects[self.target_id].height_truth
        logger.info(f"Height {height.object_height:.3f} m ({height.method.value}), truth {truth:.3f} m")
        self.report_fields.update(height_method=height.method.value, height_estimate=height.object_height,
                                  height_samples=height.samples)
        return height

    def depth_phase(self, height: HeightEstimate) -> DepthEstimate:
        self.phases.enter(_P.DEPTH_ESTIMATE, self.sim.time)
        if self.depth_bbox is None:
            raise PhaseFailure("no-detection", "no bounding box for the depth estimate")
        depth = depth_from_height(height, self.depth_bbox, self.k, -height.altitude)
        self.report_fields["depth_initial"] = depth.x_c_initial
        logger.info(f"Initial depth {depth.x_c_initial:.3f} m from height and a {self.depth_bbox.h:.1f} px box")
        return depth

    def trajectory_phase(self, depth: DepthEstimate) -> DepthEstimate:
        self.phases.enter(_P.TRAJECTORY_TRACK, self.sim.time)
        sim, k, cfg = self.sim, self.k, self.mission
        obs = self.last_obs
        frame = sim.capture()
        bbox = self._target_box(sim.detect([self.kind]))
        if bbox is None:
            raise PhaseFailure("target-lost", "target not detected at the start of tracking")
        tracker = ObjectTracker(self.scenario.tracking)
        exclude = None
        if obs is not None and len(obs.frames) >= 2:
            masks = obs.masks(self.scenario.tracking.diff_threshold)
            exclude = GrayFrame(np.maximum.reduce([m.pixels for m in masks]), frame.timestamp)
        tracker.initialize(frame, bbox, exclude)
        pixel_rng = sim.rngs["pixel"]
        noise_px = self.scenario.noise.pixel

        def measure(point: np.ndarray) -> np.ndarray:
            return point + pixel_rng.normal(0.0, noise_px, 2)

        ekf = ekf_init(measure(tracker.mean_point()), depth.x_c_initial, k, self.scenario.ekf)
        truth0 = self._true_depth(tracker.mean_point())
        self.report_fields["depth_initial_truth"] = truth0

        offset = back_project(tracker.mean_point(), depth.x_c_initial, k)
        end_dist = max(cfg.standoff_m,
                       k.focal_length * abs(offset[1]) / max(k.u0 - cfg.frame_margin_px, 1.0),
                       k.focal_length * abs(offset[2]) / max(k.v0 - cfg.frame_margin_px, 1.0))
        yaw = sim.hold.yaw
        forward = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        travel = max(depth.x_c_initial - end_dist, 0.0)
        end = sim.hold.position + travel * forward
        traj = sim.plan_to(end, duration=cfg.track_duration_s)
        logger.info(f"Tracking flight of {travel:.1f} m over {traj.duration:.1f} s (stop {end_dist:.1f} m short)")

        state = {"ekf": ekf, "t": frame.timestamp, "bundle": sim.sense(), "truth": truth0}

        def redetect() -> Optional[BBox]:
            return self._target_box(sim.detect([self.kind]))

        def on_frame(s: Simulator) -> None:
            dt = s.time - state["t"]
            if dt <= 1e-12:
                return
            current = s.capture()
            bundle: SensorBundle = s.sense()
            prev: SensorBundle = state["bundle"]
            inputs = EkfInputs(0.5 * (prev.imu_rates + bundle.imu_rates),
                               0.5 * (body_velocity(prev) + body_velocity(bundle)))
            e = ekf_predict(state["ekf"], inputs, dt, self.scenario.ekf)
            result = tracker.track_step(current, None, redetect)
            z = measure(result.mean_point)
            if result.reinitialized:
                e = ekf_reanchor(e, z, k, self.scenario.ekf)
            e, info = ekf_update(e, z, k, self.scenario.ekf)
            truth = self._true_depth(result.mean_point)
            state.update(ekf=e, t=s.time, bundle=bundle, truth=truth)
            b, raw = result.bbox, result.raw_bbox
            self.logs["track"].append({
                "t": s.time, "u": b.u, "v": b.v, "w": b.w, "h": b.h,
                "raw_u": raw.u, "raw_v": raw.v, "raw_w": raw.w, "raw_h": raw.h,
                "mean_u": result.mean_point[0], "mean_v": result.mean_point[1],
                "tracked": result.tracked_count, "reinitialized": int(result.reinitialized),
                "rejected": int(result.rejected)})
            self.logs["ekf"].append({
                "t": s.time, "x_c": e.x[0], "y_c": e.x[1], "z_c": e.x[2], "sigma_x": e.depth_std,
                "innovation_u": info.innovation[0], "innovation_v": info.innovation[1],
                "mahalanobis": info.mahalanobis, "gated": int(info.gated), "floored": int(info.floored)})
            self.logs["depth"].append({"t": s.time, "estimate": e.depth, "truth": truth, "sigma": e.depth_std})

        sim.fly_trajectory(traj, yaw, on_frame=on_frame)
        refined = state["ekf"].depth
        self.report_fields.update(depth_refined=refined, depth_refined_truth=state["truth"])
        logger.info(f"Refined depth {refined:.3f} m (truth {state['truth']}), initial {depth.x_c_initial:.3f} m")
        return replace(depth, x_c_refined=refined)

    # --- driver ---

    def run(self) -> MissionReport:
        failure: Optional[str] = None
        try:
            self.detect_phase()
            bbox = self.active_inference_phase() if self.kind == ObjectKind.WIND_TURBINE else None
            self.planar_approach_phase(bbox)
            if self.kind == ObjectKind.WIND_TURBINE:
                height = self.blade_align_height()
            else:
                self.depth_bbox = self._target_box(self.sim.detect([self.kind]))
                height = self.climb_until_aligned()
            height = self.height_phase(height)
            depth = self.depth_phase(height)
            self.trajectory_phase(depth)
            self.phases.enter(_P.DONE, self.sim.time)
        except PhaseFailure as e:
            failure = e.reason
            logger.error(f"Mission failed in {self.phases.current}: {e}", exc_info=True)
        except SimulationError as e:
            failure = _reason_of(e)
            logger.error(f"Mission failed in {self.phases.current}: {e}", exc_info=True)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            # planner and estimator arithmetic on degenerate inputs
            failure = "invalid-value"
            logger.error(f"Mission failed in {self.phases.current}: {type(e).__name__}: {e}", exc_info=True)
        if failure is not None:
            self.phases.enter(_P.FAILED, self.sim.time)
        return self._report(failure)

    def _report(self, failure: Optional[str]) -> MissionReport:
        truth = self.scenario.objects[self.target_id].height_truth if self.target_id is not None else float("nan")
        logs = {**self.logs, **self.sim.logs}
        return MissionReport(
            scenario=self.scenario.name, seed=self.sim.seed, target_class=self.kind,
            outcome="Failed" if failure else "Done", failure_reason=failure, height_truth=truth,
            phases=list(self.phases.records), sim_time=self.sim.time, logs=logs, **self.report_fields)


def _reason_of(e: SimulationError) -> str:
    name = type(e).__name__.removesuffix("Error")
    return "".join(f"-{c.lower()}" if c.isupper() else c for c in name).lstrip("-")


def run_mission(scenario: Scenario, seed: Optional[int] = None, cfg: Optional[Settings] = None,
                frame_sink=None) -> MissionReport:
    return MissionRunner(scenario, seed, cfg, frame_sink).run()
