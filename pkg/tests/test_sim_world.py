# tests/test_sim_world.py
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.sim_world import (BLADE_SYMMETRY, advance_scene, blade_angle, blade_tips, build_scene,
                            object_top_vertex, plane_depth_along_ray, silhouette_polygons)
from conftest import tower_scenario, turbine_scenario


def test_blade_angle_wraps_into_one_turn(turbine):
    obj = build_scene(turbine).objects[0]
    for t in (0.0, 1.0, 2.9, 3.0, 100.0):
        beta = blade_angle(obj, t)
        assert 0.0 <= beta < 2.0 * math.pi
    full_turn = blade_angle(obj, 3.0)
    assert min(full_turn, 2.0 * math.pi - full_turn) == pytest.approx(0.0, abs=1e-9)


def test_advance_scene_moves_time_only(turbine):
    scene = build_scene(turbine)
    later = advance_scene(scene, 0.5)
    assert later.time == pytest.approx(0.5)
    assert later.objects is scene.objects
    assert advance_scene(scene, 0.0) is scene
    with pytest.raises(ValueError):
        advance_scene(scene, -0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=30.0))
def test_top_vertex_reaches_full_height_at_upright_phase(t):
    scenario = turbine_scenario()
    obj = build_scene(scenario).objects[0]
    top = object_top_vertex(obj, t)
    hub_height = obj.turbine_params.hub_height
    l_b = obj.turbine_params.blade_length
    # The highest of three blades 120 degrees apart is never more than 60 degrees off vertical
    assert hub_height + 0.5 * l_b - 1e-9 <= -top[2] <= hub_height + l_b + 1e-9


def test_top_vertex_at_mercedes_phase(turbine):
    obj = build_scene(turbine).objects[0]
    period = BLADE_SYMMETRY / obj.turbine_params.blade_angular_velocity
    for n in range(4):
        top = object_top_vertex(obj, n * period)
        assert -top[2] == pytest.approx(obj.height_truth, abs=1e-9)


def test_blade_tips_are_symmetric_around_hub(turbine):
    obj = build_scene(turbine).objects[0]
    tips = np.array(blade_tips(obj, 0.37))
    np.testing.assert_allclose(tips.mean(axis=0), obj.hub, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(tips - obj.hub, axis=1), obj.turbine_params.blade_length)


def test_tower_top_is_height(tower):
    obj = build_scene(tower).objects[0]
    np.testing.assert_allclose(object_top_vertex(obj, 0.0), [60.0, 0.0, -31.88])


def test_objects_face_start_by_default(tower):
    obj = build_scene(tower).objects[0]
    # Start is due south of the tower, so the frontal normal points south
    np.testing.assert_allclose(obj.normal, [-1.0, 0.0, 0.0], atol=1e-12)


def test_silhouettes_lie_in_frontal_plane(turbine):
    obj = build_scene(turbine).objects[0]
    for poly in silhouette_polygons(obj, 1.3):
        np.testing.assert_allclose((poly.vertices - obj.base) @ obj.normal, 0.0, atol=1e-9)
    parts = [p.part for p in silhouette_polygons(obj, 0.0)]
    assert parts == ["blade", "blade", "blade", "mast", "nacelle"]


def test_plane_depth_along_ray():
    obj = build_scene(tower_scenario()).objects[0]
    origin = np.array([0.0, 0.0, -10.0])
    assert plane_depth_along_ray(obj, origin, np.array([1.0, 0.0, 0.0])) == pytest.approx(60.0)
    assert plane_depth_along_ray(obj, origin, np.array([1.0, 0.5, -0.1])) == pytest.approx(60.0)
    assert plane_depth_along_ray(obj, origin, np.array([0.0, 1.0, 0.0])) is None
