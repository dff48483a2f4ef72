# core/simulator.py
import logging
import zlib
from typing import Callable, Collection, Dict, List, Optional

import numpy as np

from models.models import ObjectKind, Scenario
from .config import Settings, settings as default_settings
from .control import HoverSetpoint, PidState, hover_pid, path_follow
from .detection import BBox, detect
from .planning import BoundaryConditions, CubicTrajectory, choose_duration, evaluate, plan_cubic
from .quad_dynamics import ControlInput, QuadParams, QuadState, step, yaw_of
from .raster_vision import GrayFrame, render
from .sensors import CameraIntrinsics, SensorBundle, sample_sensors
from .sim_world import Scene, build_scene

logger = logging.getLogger("simulator")

# One stream per consumer, so adding draws in one module never shifts another
RNG_LABELS = ("sensors", "detection", "pixel")

ControllerFn = Callable[["Simulator"], ControlInput]
FrameFn = Callable[["Simulator"], Optional[bool]] # True stops the run early


def spawn_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode()),)))


class Simulator:
    """Fixed-rate closed loop: RK4 dynamics, zero-order-hold control, periodic perception.

    Time is an integer count of dynamics steps, so the perception cadence never drifts.
    """

    def __init__(self, scenario: Scenario, seed: Optional[int] = None, cfg: Optional[Settings] = None):
        self.scenario = scenario
        self.cfg = cfg or default_settings
        self.seed = scenario.seed if seed is None else seed
        self.params = QuadParams.from_config(scenario.quad)
        self.k = CameraIntrinsics.from_config(scenario.camera)
        self.gains = scenario.gains
        self.noise = scenario.noise
        self.scene = build_scene(scenario)
        start = scenario.mission
        self.quad = QuadState.at_rest(start.start_position, start.start_yaw)
        self.hold = HoverSetpoint(self.quad.r.copy(), start.start_yaw)
        self.pid = PidState()
        self.rngs: Dict[str, np.random.Generator] = {label: spawn_rng(self.seed, label) for label in RNG_LABELS}
        self.tick = 0
        self.control_tick = 0
        self.frame_index = 0
        self.frame_sink: Optional[Callable[[GrayFrame, int], None]] = None
        self.logs: Dict[str, List[dict]] = {"control": [], "trajectory": []}
        self.a_max = start.accel_fraction * (self.params.thrust_max / self.params.mass - self.params.gravity)

    @property
    def time(self) -> float:
        return self.tick * self.cfg.DYNAMICS_DT

    @property
    def yaw(self) -> float:
        return yaw_of(self.quad.R)

    def _advance(self, u: ControlInput) -> None:
        for _ in range(self.cfg.control_substeps):
            self.quad = step(self.quad, u, self.params, self.cfg.DYNAMICS_DT)
            self.tick += 1
        self.control_tick += 1
        self.scene = Scene(self.scene.objects, self.time)

    def _log_control(self, u: ControlInput) -> None:
        self.logs["control"].append({
            "t": self.time, "thrust": u.thrust,
            "tau_x": float(u.torques[0]), "tau_y": float(u.torques[1]), "tau_z": float(u.torques[2]),
            "e_t": float(u.frenet_error[0]), "e_n": float(u.frenet_error[1]), "e_b": float(u.frenet_error[2]),
            "thrust_saturated": int(u.thrust_saturated), "torque_saturated": int(u.torque_saturated),
        })

    def run(self, controller: ControllerFn, duration: float, on_frame: Optional[FrameFn] = None) -> float:
        """Runs for `duration` seconds of control ticks; returns the simulated time elapsed."""
        t_start = self.time
        for _ in range(int(round(duration / self.cfg.CONTROL_DT))):
            if on_frame is not None and self.control_tick % self.cfg.perception_substeps == 0:
                if on_frame(self):
                    break
            u = controller(self)
            self._log_control(u)
            self._advance(u)
        return self.time - t_start

    def hover(self, duration: float, setpoint: Optional[HoverSetpoint] = None,
              on_frame: Optional[FrameFn] = None) -> float:
        if setpoint is not None:
            self.hold = HoverSetpoint(np.asarray(setpoint.position, dtype=float), setpoint.yaw)

        def controller(sim: "Simulator") -> ControlInput:
            return hover_pid(sim.quad, sim.hold, sim.gains, sim.params, sim.cfg.CONTROL_DT, sim.pid)

        return self.run(controller, duration, on_frame)

    def hover_for(self, duration: float):
        """Holds position for `duration`; returns (scene, quad) for callers that only need the world."""
        self.hover(duration)
        return self.scene, self.quad

    def fly_trajectory(self, traj: CubicTrajectory, yaw: float, on_frame: Optional[FrameFn] = None,
                       duration: Optional[float] = None) -> float:
        def controller(sim: "Simulator") -> ControlInput:
            ref = evaluate(traj, sim.time)
            sim.logs["trajectory"].append({
                "t": sim.time,
                "x": ref.position[0], "y": ref.position[1], "z": ref.position[2],
                "vx": ref.velocity[0], "vy": ref.velocity[1], "vz": ref.velocity[2],
                "ax": ref.acceleration[0], "ay": ref.acceleration[1], "az": ref.acceleration[2],
            })
            return path_follow(sim.quad, traj, sim.time, sim.gains, sim.params, yaw)

        return self.run(controller, traj.tf - self.time if duration is None else duration, on_frame)

    def plan_to(self, target, duration: Optional[float] = None) -> CubicTrajectory:
        bc = BoundaryConditions.rest_to_rest(self.quad.r, target)
        mission = self.scenario.mission
        T = choose_duration(bc, self.a_max, mission.v_cruise, mission.min_duration_s)
        if duration is not None:
            T = max(T, duration)
        return plan_cubic(bc, self.time, self.time + T)

    def fly_to(self, target, yaw: Optional[float] = None, settle: Optional[float] = None,
               on_frame: Optional[FrameFn] = None) -> None:
        """Rest-to-rest cubic to `target`, then a hover settle at the target."""
        yaw = self.hold.yaw if yaw is None else yaw
        target = np.asarray(target, dtype=float)
        traj = self.plan_to(target)
        logger.debug(f"Flying to {np.round(target, 3).tolist()} over {traj.duration:.2f} s")
        self.fly_trajectory(traj, yaw, on_frame)
        self.pid.reset()
        settle = self.scenario.mission.settle_s if settle is None else settle
        self.hover(settle, HoverSetpoint(target, yaw), on_frame)

    def capture(self) -> GrayFrame:
        frame = render(self.scene, self.quad, self.k)
        if self.frame_sink is not None:
            self.frame_sink(frame, self.frame_index)
        self.frame_index += 1
        return frame

    def sense(self) -> SensorBundle:
        return sample_sensors(self.quad, self.noise, self.rngs["sensors"], self.time)

    def detect(self, classes: Optional[Collection[ObjectKind]] = None) -> List[BBox]:
        return detect(self.scene, self.quad, self.k, self.noise, self.rngs["detection"],
                      self.scenario.confidence, classes)
