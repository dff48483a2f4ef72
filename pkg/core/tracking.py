# core/tracking.py
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import cv2
import numpy as np
from filterpy.kalman import predict as kalman_predict
from filterpy.kalman import update as kalman_update

from models.models import ObjectKind, TrackingConfig
from .detection import BBox
from .exceptions import TrackingLostError
from .raster_vision import GrayFrame, canny, corner_strength, lk_track

logger = logging.getLogger("tracking")

EDGE_PAD_PX = 3.0
MOTION_DILATE = np.ones((7, 7), dtype=np.uint8)
DERIVATIVE_PRIOR_SCALE = 100.0

# state layout: u, v, area, ratio, then their time derivatives
H_BBOX = np.hstack((np.eye(4), np.zeros((4, 4))))


@dataclass(frozen=True)
class BBoxState:
    x: np.ndarray # (8,)
    P: np.ndarray # (8, 8)

    @property
    def u(self) -> float:
        return float(self.x[0])

    @property
    def v(self) -> float:
        return float(self.x[1])

    @property
    def area(self) -> float:
        return float(self.x[2])

    @property
    def ratio(self) -> float:
        return float(self.x[3])

    @property
    def derivatives(self) -> np.ndarray:
        return self.x[4:].copy()

    def to_bbox(self, template: BBox) -> BBox:
        area, ratio = max(self.area, 1e-9), max(self.ratio, 1e-9)
        return BBox(self.u, self.v, float(np.sqrt(area * ratio)), float(np.sqrt(area / ratio)),
                    template.confidence, template.object_class, template.timestamp, template.object_id)


def _measurement(bbox: BBox) -> np.ndarray:
    return np.array([bbox.u, bbox.v, bbox.area, bbox.ratio], dtype=float)


def bbox_state_from(bbox: BBox, cfg: Optional[TrackingConfig] = None) -> BBoxState:
    cfg = cfg or TrackingConfig()
    r = np.asarray(cfg.r_measurement, dtype=float)
    x = np.concatenate((_measurement(bbox), np.zeros(4)))
    P = np.diag(np.concatenate((r, DERIVATIVE_PRIOR_SCALE * r)))
    return BBoxState(x, P)


def _symmetrized(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def bbox_from_points(points: np.ndarray, object_class: ObjectKind = ObjectKind.ELECTRIC_TOWER,
                     confidence: float = 1.0, timestamp: float = 0.0, object_id: Optional[int] = None) -> BBox:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise TrackingLostError(f"{len(pts)} tracked points, need at least 2")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    w, h = hi - lo
    if w <= 0 or h <= 0:
        raise TrackingLostError("tracked points are collinear along an image axis")
    return BBox(float(0.5 * (lo[0] + hi[0])), float(0.5 * (lo[1] + hi[1])), float(w), float(h),
                confidence, object_class, timestamp, object_id)


def kf_predict(state: BBoxState, dt: float, cfg: Optional[TrackingConfig] = None) -> BBoxState:
    """Constant-velocity propagation; process noise scales with dt."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    cfg = cfg or TrackingConfig()
    F = np.eye(8)
    F[:4, 4:] = dt * np.eye(4)
    Q = np.diag([cfg.q_position * dt] * 4 + [cfg.q_derivative * dt] * 4)
    x, P = kalman_predict(state.x, state.P, F=F, Q=Q)
    return BBoxState(x, _symmetrized(P))


def kf_update(state: BBoxState, meas: BBox, cfg: Optional[TrackingConfig] = None) -> Tuple[BBoxState, bool]:
    """Linear update on (u, v, area, ratio); returns (state, rejected)."""
    cfg = cfg or TrackingConfig()
    z = _measurement(meas)
    if not np.all(np.isfinite(z)):
        logger.warning(f"Rejected non-finite bbox measurement {z}")
        return state, True
    R = np.diag(cfg.r_measurement)
    x, P = kalman_update(state.x, state.P, z, R, H_BBOX)
    return BBoxState(x, _symmetrized(P)), False


@dataclass(frozen=True)
class TrackResult:
    bbox: BBox # filtered
    raw_bbox: BBox
    points: np.ndarray # all feature positions, propagated ones included
    mean_point: np.ndarray # EKF measurement
    tracked_count: int
    reinitialized: bool
    rejected: bool = False


def select_features(frame: GrayFrame, bbox: BBox, cfg: TrackingConfig,
                    exclude: Optional[GrayFrame] = None) -> np.ndarray:
    """Canny edge points inside the box with a well-conditioned structure tensor.

    Points under the dilated `exclude` mask (moving blades) are never selected.
    """
    edges = canny(frame, bbox.inflated(EDGE_PAD_PX), cfg.canny_low, cfg.canny_high).points
    if len(edges) and exclude is not None:
        moving = cv2.dilate(exclude.pixels, MOTION_DILATE) > 0
        edges = edges[~moving[edges[:, 1].astype(int), edges[:, 0].astype(int)]]
    if len(edges) == 0:
        return edges
    strength = corner_strength(frame)[edges[:, 1].astype(int), edges[:, 0].astype(int)]
    keep = strength >= cfg.corner_quality * float(strength.max())
    edges, strength = edges[keep], strength[keep]
    if len(edges) > cfg.max_points:
        order = np.lexsort((edges[:, 0], edges[:, 1], -strength))
        edges = edges[np.sort(order[:cfg.max_points])]
    return edges


RedetectFn = Callable[[], Optional[BBox]]


class ObjectTracker:
    """Canny features tracked by Lucas-Kanade and boxed through a constant-velocity KF.

    Features that LK loses are dropped from the measured set but kept as virtual points
    moving with the similarity motion of the inliers, so the mean feature point keeps
    referring to the same physical points. Points under the motion mask (moving blades)
    or with inconsistent flow are carried the same way for that frame.
    """

    def __init__(self, cfg: Optional[TrackingConfig] = None):
        self.cfg = cfg or TrackingConfig()
        self.frame: Optional[GrayFrame] = None
        self.points = np.empty((0, 2))
        self.virtual = np.zeros(0, dtype=bool)
        self.state: Optional[BBoxState] = None
        self.template: Optional[BBox] = None
        self.reinit_count = 0

    @property
    def tracked_count(self) -> int:
        return int(np.count_nonzero(~self.virtual))

    def initialize(self, frame: GrayFrame, bbox: BBox, exclude: Optional[GrayFrame] = None) -> None:
        pts = select_features(frame, bbox, self.cfg, exclude)
        if len(pts) < self.cfg.min_points:
            raise TrackingLostError(f"only {len(pts)} features inside the detection box")
        self.frame = frame
        self.points = pts
        self.virtual = np.zeros(len(pts), dtype=bool)
        self.template = bbox
        raw = bbox_from_points(pts, bbox.object_class, bbox.confidence, frame.timestamp, bbox.object_id)
        self.state = bbox_state_from(raw, self.cfg)
        logger.info(f"Tracker initialized with {len(pts)} features at t={frame.timestamp:.3f}")

    def mean_point(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def _similarity(self, src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if len(src) >= 3:
            M, inliers = cv2.estimateAffinePartial2D(src.astype(np.float32), dst.astype(np.float32),
                                                     method=cv2.RANSAC, ransacReprojThreshold=self.cfg.flow_outlier_px)
            if M is not None:
                return M, inliers.reshape(-1).astype(bool)
        shift = np.median(dst - src, axis=0) if len(src) else np.zeros(2)
        M = np.array([[1.0, 0.0, shift[0]], [0.0, 1.0, shift[1]]])
        inliers = np.linalg.norm(dst - src - shift, axis=1) <= self.cfg.flow_outlier_px
        return M, inliers

    def track_step(self, frame: GrayFrame, motion_mask: Optional[GrayFrame] = None,
                   redetect: Optional[RedetectFn] = None) -> TrackResult:
        if self.state is None or self.frame is None:
            raise TrackingLostError("tracker not initialized")
        dt = frame.timestamp - self.frame.timestamp
        new, ok = lk_track(self.frame, frame, self.points, self.cfg.lk_max_error)
        measured = ok & ~self.virtual
        if motion_mask is not None and len(self.points):
            moving = cv2.dilate(motion_mask.pixels, MOTION_DILATE) > 0
            h, w = moving.shape
            old_idx = np.clip(np.round(self.points).astype(int), 0, [w - 1, h - 1])
            new_idx = np.clip(np.round(np.nan_to_num(new)).astype(int), 0, [w - 1, h - 1])
            occluded = moving[old_idx[:, 1], old_idx[:, 0]] | moving[new_idx[:, 1], new_idx[:, 0]]
        else:
            occluded = np.zeros(len(self.points), dtype=bool)

        good = measured & ~occluded
        M, inliers = self._similarity(self.points[good], new[good])
        consistent = np.zeros(len(self.points), dtype=bool)
        consistent[np.nonzero(good)[0][inliers]] = True
        carried = self.points @ M[:, :2].T + M[:, 2]
        positions = np.where(consistent[:, None], new, carried)

        lost = ~ok & ~self.virtual
        if np.any(lost):
            logger.debug(f"{int(lost.sum())} features lost by LK at t={frame.timestamp:.3f}")
        self.virtual = self.virtual | lost
        self.points = positions
        self.frame = frame

        reinitialized = False
        if self.tracked_count < self.cfg.min_points:
            bbox = redetect() if redetect is not None else None
            if bbox is None:
                raise TrackingLostError(f"{self.tracked_count} tracked features and no re-detection")
            logger.warning(f"Re-initializing tracker at t={frame.timestamp:.3f} ({self.tracked_count} features left)")
            state = self.state
            self.initialize(frame, bbox)
            self.state = state
            self.reinit_count += 1
            reinitialized = True

        real = self.points[~self.virtual]
        raw = bbox_from_points(real, self.template.object_class, self.template.confidence,
                               frame.timestamp, self.template.object_id)
        if dt > 0:
            self.state = kf_predict(self.state, dt, self.cfg)
        self.state, rejected = kf_update(self.state, raw, self.cfg)
        return TrackResult(self.state.to_bbox(raw), raw, self.points.copy(), self.mean_point(),
                           self.tracked_count, reinitialized, rejected)
