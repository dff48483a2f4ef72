# core/sim_world.py
import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from models.models import ObjectKind, Scenario

logger = logging.getLogger("sim_world")

TWO_PI = 2.0 * math.pi
BLADE_SYMMETRY = TWO_PI / 3.0
UP = np.array([0.0, 0.0, -1.0]) # NED

# Tower outline, as fractions of the tower height
TOWER_BASE_HALF_WIDTH = 0.15
TOWER_TOP_HALF_WIDTH = 0.04
TOWER_ARMS = ((0.62, 0.22), (0.76, 0.18), (0.90, 0.14)) # (height, half-span)
TOWER_ARM_THICKNESS = 0.02

# Turbine structure, meters
MAST_BASE_HALF_WIDTH = 2.5
MAST_TOP_HALF_WIDTH = 1.5
NACELLE_HALF_WIDTH = 3.0
NACELLE_HALF_HEIGHT = 2.0
BLADE_ROOT_HALF_WIDTH = 0.4
BLADE_SHOULDER_HALF_WIDTH = 1.0
BLADE_SHOULDER_FRACTION = 0.25
BLADE_TIP_CORNER_INSET = 0.3
BLADE_TIP_CORNER_HALF_WIDTH = 0.5


@dataclass(frozen=True)
class TurbineParams:
    hub_height: float
    blade_length: float
    blade_angular_velocity: float
    initial_blade_angle: float # beta at scene time 0


@dataclass(frozen=True)
class SceneObject:
    kind: ObjectKind
    base: np.ndarray
    height_truth: float
    facing_yaw: float # direction the frontal surface faces
    turbine_params: Optional[TurbineParams] = None

    @property
    def is_turbine(self) -> bool:
        return self.kind == ObjectKind.WIND_TURBINE

    @property
    def lateral_axis(self) -> np.ndarray:
        """Viewer's right-hand direction for a viewer facing the frontal surface."""
        return np.array([math.sin(self.facing_yaw), -math.cos(self.facing_yaw), 0.0])

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.facing_yaw), math.sin(self.facing_yaw), 0.0])

    @property
    def hub(self) -> np.ndarray:
        return self.base + self.turbine_params.hub_height * UP


@dataclass(frozen=True)
class Scene:
    objects: Tuple[SceneObject, ...] = ()
    time: float = 0.0


class Polygon(NamedTuple):
    part: str # "tower", "mast", "nacelle" or "blade"
    vertices: np.ndarray # (N, 3) world points


def blade_angle(obj: SceneObject, t: float) -> float:
    """Reference-blade angle beta(t) = beta_0 + omega t, wrapped to [0, 2 pi)."""
    p = obj.turbine_params
    return math.fmod(p.initial_blade_angle + p.blade_angular_velocity * t, TWO_PI) % TWO_PI


def advance_scene(scene: Scene, dt: float) -> Scene:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return scene
    return replace(scene, time=scene.time + dt)


def _blade_direction(obj: SceneObject, beta: float) -> np.ndarray:
    return math.sin(beta) * obj.lateral_axis + math.cos(beta) * UP


def blade_tips(obj: SceneObject, t: float) -> List[np.ndarray]:
    beta = blade_angle(obj, t)
    l_b = obj.turbine_params.blade_length
    return [obj.hub + l_b * _blade_direction(obj, beta + k * BLADE_SYMMETRY) for k in range(3)]


def object_top_vertex(obj: SceneObject, t: float) -> np.ndarray:
    if not obj.is_turbine:
        return obj.base + obj.height_truth * UP
    return min(blade_tips(obj, t), key=lambda p: p[2])


def _planar(obj: SceneObject, origin: np.ndarray, outline: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Maps (lateral, up) outline coordinates onto the object's frontal plane."""
    lat = obj.lateral_axis
    return np.array([origin + s * lat + h * UP for s, h in outline])


def _tower_outline(height: float) -> List[Tuple[float, float]]:
    def half_width(h: float) -> float:
        frac = h / height
        return height * (TOWER_BASE_HALF_WIDTH + (TOWER_TOP_HALF_WIDTH - TOWER_BASE_HALF_WIDTH) * frac)

    left: List[Tuple[float, float]] = [(-half_width(0.0), 0.0)]
    half_t = 0.5 * TOWER_ARM_THICKNESS * height
    for frac, span in TOWER_ARMS:
        lo, hi = frac * height - half_t, frac * height + half_t
        left += [(-half_width(lo), lo), (-span * height, lo), (-span * height, hi), (-half_width(hi), hi)]
    left.append((-half_width(height), height))
    right = [(-s, h) for s, h in reversed(left)]
    return left + right


def _blade_outline(l_b: float) -> List[Tuple[float, float]]:
    # (along-blade, across-blade)
    shoulder = BLADE_SHOULDER_FRACTION * l_b
    corner = l_b - BLADE_TIP_CORNER_INSET
    return [(0.0, -BLADE_ROOT_HALF_WIDTH), (shoulder, -BLADE_SHOULDER_HALF_WIDTH),
            (corner, -BLADE_TIP_CORNER_HALF_WIDTH), (l_b, 0.0),
            (corner, BLADE_TIP_CORNER_HALF_WIDTH), (shoulder, BLADE_SHOULDER_HALF_WIDTH),
            (0.0, BLADE_ROOT_HALF_WIDTH)]


def silhouette_polygons(obj: SceneObject, t: float) -> List[Polygon]:
    """World-frame polygons in painter's order (later polygons drawn on top)."""
    if not obj.is_turbine:
        return [Polygon("tower", _planar(obj, obj.base, _tower_outline(obj.height_truth)))]

    p = obj.turbine_params
    hub = obj.hub
    beta = blade_angle(obj, t)
    polygons: List[Polygon] = []
    for k in range(3):
        b = beta + k * BLADE_SYMMETRY
        along = _blade_direction(obj, b)
        across = math.cos(b) * obj.lateral_axis - math.sin(b) * UP
        verts = np.array([hub + a * along + c * across for a, c in _blade_outline(p.blade_length)])
        polygons.append(Polygon("blade", verts))

    mast = [(-MAST_BASE_HALF_WIDTH, 0.0), (MAST_BASE_HALF_WIDTH, 0.0),
            (MAST_TOP_HALF_WIDTH, p.hub_height), (-MAST_TOP_HALF_WIDTH, p.hub_height)]
    polygons.append(Polygon("mast", _planar(obj, obj.base, mast)))
    nacelle = [(-NACELLE_HALF_WIDTH, -NACELLE_HALF_HEIGHT), (NACELLE_HALF_WIDTH, -NACELLE_HALF_HEIGHT),
               (NACELLE_HALF_WIDTH, NACELLE_HALF_HEIGHT), (-NACELLE_HALF_WIDTH, NACELLE_HALF_HEIGHT)]
    polygons.append(Polygon("nacelle", _planar(obj, hub, nacelle)))
    return polygons


def object_vertices(obj: SceneObject, t: float) -> np.ndarray:
    return np.vstack([poly.vertices for poly in silhouette_polygons(obj, t)])


def build_scene(scenario: Scenario) -> Scene:
    """Creates the scene at time 0 from a validated scenario."""
    start = np.asarray(scenario.mission.start_position, dtype=float)
    objects = []
    for cfg in scenario.objects:
        base = np.asarray(cfg.base, dtype=float)
        facing = cfg.facing_yaw
        if facing is None:
            facing = math.atan2(start[1] - base[1], start[0] - base[0])
        turbine = None
        if cfg.kind == ObjectKind.WIND_TURBINE:
            t = cfg.turbine
            turbine = TurbineParams(t.hub_height, t.blade_length, t.blade_angular_velocity, t.initial_blade_angle)
        objects.append(SceneObject(cfg.kind, base, cfg.height_truth, facing, turbine))
        logger.debug(f"Scene object {cfg.kind.value} at {base.tolist()} facing {facing:.4f} rad")
    return Scene(tuple(objects), 0.0)


def plane_depth_along_ray(obj: SceneObject, origin: np.ndarray, ray: np.ndarray) -> Optional[float]:
    """Ray parameter where origin + s*ray meets the object's frontal plane, None if parallel."""
    n = obj.normal
    denom = float(n @ ray)
    if abs(denom) < 1e-12:
        return None
    return float(n @ (obj.base - origin)) / denom
