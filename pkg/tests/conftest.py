# tests/conftest.py
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.quad_dynamics import QuadParams, QuadState  # noqa: E402
from core.raster_vision import render  # noqa: E402
from core.sensors import CameraIntrinsics  # noqa: E402
from core.sim_world import build_scene  # noqa: E402
from models.models import NoiseConfig, Scenario  # noqa: E402

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


def tower_scenario(**mission) -> Scenario:
    return Scenario.model_validate({
        "name": "tower-test",
        "target_class": "ElectricTower",
        "objects": [{"kind": "ElectricTower", "base": [60.0, 0.0, 0.0], "height": 31.88}],
        "mission": {"start_position": [0.0, 0.0, -10.0], **mission},
    })


def turbine_scenario(omega: float = 2.0943951023931953, initial_angle: float = 0.0, **mission) -> Scenario:
    return Scenario.model_validate({
        "name": "turbine-test",
        "target_class": "WindTurbine",
        "objects": [{"kind": "WindTurbine", "base": [150.0, 0.0, 0.0],
                     "turbine": {"blade_angular_velocity": omega, "initial_blade_angle": initial_angle}}],
        "mission": {"start_position": [0.0, 0.0, -52.48], **mission},
    })


@pytest.fixture
def k() -> CameraIntrinsics:
    return CameraIntrinsics()


@pytest.fixture
def params() -> QuadParams:
    return QuadParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def noiseless() -> NoiseConfig:
    return NoiseConfig.noiseless()


@pytest.fixture
def tower() -> Scenario:
    return tower_scenario()


@pytest.fixture
def turbine() -> Scenario:
    return turbine_scenario()


@pytest.fixture
def tower_frame(tower, k):
    """Tower 60 m ahead, camera 10 m above ground, level and facing north."""
    scene = build_scene(tower)
    quad = QuadState.at_rest(tower.mission.start_position)
    return render(scene, quad, k)


@pytest.fixture
def turbine_quad(turbine) -> QuadState:
    return QuadState.at_rest(turbine.mission.start_position)
