# core/raster_vision.py
import logging
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np

from .exceptions import FrameShapeError
from .quad_dynamics import QuadState
from .sensors import CameraIntrinsics, project_many, world_to_camera
from .sim_world import Scene, silhouette_polygons

logger = logging.getLogger("raster_vision")

BACKGROUND = 30
FOREGROUND = 200
NEAR_CLIP = 0.1 # m
FIXED_POINT_SHIFT = 4 # fillPoly sub-pixel bits

LK_WINDOW = (15, 15)
LK_MAX_LEVEL = 2 # 3 pyramid levels
LK_CRITERIA = (cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01)
BLUR_KERNEL = (5, 5)
BLUR_SIGMA = 1.4


@dataclass(frozen=True)
class GrayFrame:
    pixels: np.ndarray # (height, width) uint8, row-major
    timestamp: float = 0.0

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class EdgeSet:
    points: np.ndarray # (N, 2) pixel (u, v)
    source_bbox: object

    def __len__(self) -> int:
        return len(self.points)


def blank_frame(k: CameraIntrinsics, timestamp: float = 0.0) -> GrayFrame:
    return GrayFrame(np.full((k.height, k.width), BACKGROUND, dtype=np.uint8), timestamp)


def render(scene: Scene, quad: QuadState, k: CameraIntrinsics) -> GrayFrame:
    img = np.full((k.height, k.width), BACKGROUND, dtype=np.uint8)
    # Far objects first so nearer silhouettes overwrite them
    order = sorted(scene.objects, key=lambda o: -float(world_to_camera(o.base, quad)[0]))
    scale = float(1 << FIXED_POINT_SHIFT)
    for obj in order:
        for poly in silhouette_polygons(obj, scene.time):
            cam = world_to_camera(poly.vertices, quad)
            if np.any(cam[:, 0] <= NEAR_CLIP):
                continue
            pix = project_many(cam, k)
            if not np.all(np.isfinite(pix)):
                continue
            # Clamp far outliers so the fixed-point coordinates stay inside int32
            pix = np.clip(pix, -1e5, 1e5)
            pts = np.round(pix * scale).astype(np.int32).reshape(-1, 1, 2)
            cv2.fillPoly(img, [pts], FOREGROUND, lineType=cv2.LINE_8, shift=FIXED_POINT_SHIFT)
    return GrayFrame(img, scene.time)


def frame_difference(f_t: GrayFrame, f_prev: GrayFrame, threshold: float = 40.0) -> GrayFrame:
    """Binary motion mask: 255 where |I_t - I_prev| > threshold, else 0."""
    if f_t.pixels.shape != f_prev.pixels.shape:
        raise FrameShapeError(f"frame shapes differ: {f_t.pixels.shape} vs {f_prev.pixels.shape}")
    diff = cv2.absdiff(f_t.pixels, f_prev.pixels)
    _, mask = cv2.threshold(diff, threshold, 255, cv2.THRESH_BINARY)
    return GrayFrame(mask, f_t.timestamp)


def bbox_pixel_bounds(bbox, shape: Tuple[int, int]) -> Optional[Tuple[int, int, int, int]]:
    """Inclusive integer (u_min, v_min, u_max, v_max) of a box clipped to the frame."""
    if not (bbox.w > 0 and bbox.h > 0):
        return None
    height, width = shape
    u_min = max(0, int(np.ceil(bbox.u - 0.5 * bbox.w)))
    v_min = max(0, int(np.ceil(bbox.v - 0.5 * bbox.h)))
    u_max = min(width - 1, int(np.floor(bbox.u + 0.5 * bbox.w)))
    v_max = min(height - 1, int(np.floor(bbox.v + 0.5 * bbox.h)))
    if u_max < u_min or v_max < v_min:
        return None
    return u_min, v_min, u_max, v_max


def canny(frame: GrayFrame, bbox, low: float = 50.0, high: float = 150.0) -> EdgeSet:
    bounds = bbox_pixel_bounds(bbox, frame.pixels.shape)
    if bounds is None:
        return EdgeSet(np.empty((0, 2)), bbox)
    u_min, v_min, u_max, v_max = bounds
    smoothed = cv2.GaussianBlur(frame.pixels, BLUR_KERNEL, BLUR_SIGMA)
    edges = cv2.Canny(smoothed, low, high, L2gradient=True)
    # Binary mask on the edge map, so the box border itself never shows up as an edge
    mask = np.zeros_like(edges)
    mask[v_min:v_max + 1, u_min:u_max + 1] = 255
    edges = cv2.bitwise_and(edges, mask)
    vs, us = np.nonzero(edges)
    return EdgeSet(np.column_stack((us, vs)).astype(float), bbox)


def lk_track(prev: GrayFrame, nxt: GrayFrame, points: np.ndarray, max_error: float = 30.0) -> Tuple[np.ndarray, np.ndarray]:
    """Pyramidal Lucas-Kanade; returns (new points (N, 2), tracked flags (N,))."""
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 2)
    if len(pts) == 0:
        return np.empty((0, 2)), np.zeros(0, dtype=bool)
    p1, status, err = cv2.calcOpticalFlowPyrLK(prev.pixels, nxt.pixels, pts.reshape(-1, 1, 2), None,
                                               winSize=LK_WINDOW, maxLevel=LK_MAX_LEVEL, criteria=LK_CRITERIA)
    p1 = p1.reshape(-1, 2).astype(float)
    tracked = status.reshape(-1).astype(bool)
    tracked &= err.reshape(-1) <= max_error
    h, w = nxt.pixels.shape
    tracked &= (p1[:, 0] >= 0) & (p1[:, 0] <= w - 1) & (p1[:, 1] >= 0) & (p1[:, 1] <= h - 1)
    tracked &= np.all(np.isfinite(p1), axis=1)
    return p1, tracked


def corner_strength(frame: GrayFrame, block_size: int = 5) -> np.ndarray:
    """Minimum eigenvalue of the local structure tensor at every pixel."""
    return cv2.cornerMinEigenVal(frame.pixels, block_size, ksize=3)


def write_pgm(frame: GrayFrame, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if not cv2.imwrite(path, frame.pixels, [cv2.IMWRITE_PXM_BINARY, 1]):
        raise OSError(f"could not write frame to {path}")
