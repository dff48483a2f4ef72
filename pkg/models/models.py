# models/models.py
import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]

TURBINE_DEFAULT_HEIGHT = 77.48
TOWER_DEFAULT_HEIGHT = 31.88


class ObjectKind(str, Enum):
    WIND_TURBINE = "WindTurbine"
    ELECTRIC_TOWER = "ElectricTower"


class _Section(BaseModel):
    # Unknown keys are configuration errors, not silently dropped
    model_config = ConfigDict(extra="forbid", frozen=True)


class TurbineConfig(_Section):
    hub_height: float = Field(52.48, gt=0)
    blade_length: float = Field(25.0, gt=0)
    blade_angular_velocity: float = 2.0 * math.pi / 3.0 # rad/s; 0 gives a parked rotor
    initial_blade_angle: float = 0.0 # rad, 0 = one blade straight up

    @model_validator(mode="after")
    def _blades_clear_ground(self) -> "TurbineConfig":
        if self.blade_length >= self.hub_height:
            raise ValueError("blade_length must be smaller than hub_height")
        return self


class SceneObjectConfig(_Section):
    kind: ObjectKind
    base: Vec3 = (0.0, 0.0, 0.0) # NED, meters
    facing_yaw: Optional[float] = None # None: the frontal surface faces the start position
    height: Optional[float] = Field(None, gt=0) # towers only; turbines derive it
    turbine: Optional[TurbineConfig] = None

    @field_validator("base")
    @classmethod
    def _base_above_ground(cls, v: Vec3) -> Vec3:
        if not all(math.isfinite(c) for c in v):
            raise ValueError("base must be finite")
        if v[2] > 0:
            raise ValueError("base must satisfy z <= 0 (NED, ground at z = 0)")
        return v

    @model_validator(mode="before")
    @classmethod
    def _default_turbine_section(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("turbine") is None:
            kind = data.get("kind")
            if getattr(kind, "value", kind) == ObjectKind.WIND_TURBINE.value:
                data = {**data, "turbine": {}}
        return data

    @model_validator(mode="after")
    def _kind_consistency(self) -> "SceneObjectConfig":
        if self.kind == ObjectKind.WIND_TURBINE:
            if self.height is not None:
                raise ValueError("turbine height is hub_height + blade_length; set those instead")
        elif self.turbine is not None:
            raise ValueError("turbine section given for an ElectricTower")
        return self

    @property
    def height_truth(self) -> float:
        if self.kind == ObjectKind.WIND_TURBINE:
            return self.turbine.hub_height + self.turbine.blade_length
        return self.height if self.height is not None else TOWER_DEFAULT_HEIGHT


class QuadParamsConfig(_Section):
    mass: float = Field(1.0, gt=0)
    inertia: Vec3 = (0.01, 0.01, 0.02) # diagonal, kg m^2
    drag: Vec3 = (0.1, 0.1, 0.1) # diagonal of D
    gravity: float = Field(9.81, gt=0)
    thrust_max: Optional[float] = Field(None, gt=0) # None: 4 m g
    torque_max: float = Field(0.2, gt=0)

    @field_validator("inertia")
    @classmethod
    def _positive_inertia(cls, v: Vec3) -> Vec3:
        if min(v) <= 0:
            raise ValueError("inertia entries must be > 0")
        return v

    @field_validator("drag")
    @classmethod
    def _nonnegative_drag(cls, v: Vec3) -> Vec3:
        if min(v) < 0:
            raise ValueError("drag entries must be >= 0")
        return v


class CameraConfig(_Section):
    focal_length: float = Field(320.0, gt=0) # pixels, 90 deg horizontal FOV
    principal_point: Tuple[float, float] = (320.0, 240.0)
    width: int = Field(640, gt=0)
    height: int = Field(480, gt=0)


class NoiseConfig(_Section):
    """Standard deviations of the zero-mean Gaussian noise per channel."""
    gps_position: float = Field(0.05, ge=0) # m
    gps_velocity: float = Field(0.05, ge=0) # m/s
    altimeter: float = Field(0.02, ge=0) # m
    imu_rate: float = Field(0.005, ge=0) # rad/s
    imu_rpy: float = Field(0.001, ge=0) # rad
    pixel: float = Field(0.5, ge=0) # px
    confidence: float = Field(0.003, ge=0)

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(**{name: 0.0 for name in cls.model_fields})

    @property
    def is_noiseless(self) -> bool:
        return all(getattr(self, name) == 0.0 for name in type(self).model_fields)


class GainsConfig(_Section):
    # (tangential, normal, binormal)
    k_pos: Vec3 = (2.0, 4.0, 4.0)
    k_vel: Vec3 = (2.0, 3.0, 3.0)
    k_r: float = Field(4.0, ge=0)
    k_omega: float = Field(0.8, ge=0)
    # Hover PID, per world axis (N, E, D)
    hover_kp: Vec3 = (10.0, 10.0, 24.0)
    hover_ki: Vec3 = (6.0, 6.0, 22.5)
    hover_kd: Vec3 = (5.5, 5.5, 8.5)
    integrator_limit: float = Field(2.0, gt=0) # m s
    setpoint_prefilter: bool = True
    drag_feedforward: bool = True

    @model_validator(mode="after")
    def _nonnegative(self) -> "GainsConfig":
        for name in ("k_pos", "k_vel", "hover_kp", "hover_ki", "hover_kd"):
            if min(getattr(self, name)) < 0:
                raise ValueError(f"{name} entries must be >= 0")
        return self


class ConfidenceConfig(_Section):
    c_min: float = 0.90
    c_max: float = 0.975
    peak_value: float = 0.974
    sharpness: float = Field(8.0, gt=0)

    @model_validator(mode="after")
    def _ordering(self) -> "ConfidenceConfig":
        if not (0.0 <= self.c_min < self.peak_value <= self.c_max <= 1.0):
            raise ValueError("confidence levels must satisfy 0 <= c_min < peak_value <= c_max <= 1")
        return self


class TrackingConfig(_Section):
    canny_low: float = Field(50.0, ge=0)
    canny_high: float = Field(150.0, gt=0)
    diff_threshold: float = Field(40.0, ge=0) # frame-difference binarization level
    min_points: int = Field(10, ge=2) # re-detect below this many LK-tracked points
    max_points: int = Field(300, ge=2)
    corner_quality: float = Field(0.01, gt=0, le=1) # fraction of the strongest min-eigenvalue
    lk_max_error: float = Field(30.0, gt=0)
    flow_outlier_px: float = Field(3.0, gt=0)
    q_position: float = Field(1e-2, gt=0) # bbox KF process noise, per second
    q_derivative: float = Field(1e-1, gt=0)
    r_measurement: Tuple[float, float, float, float] = (1.0, 1.0, 25.0, 1e-4) # u, v, area, ratio


class EkfConfig(_Section):
    p0: Vec3 = (4.0, 1.0, 1.0) # m^2
    p0_depth_relative_std: float = Field(0.1, ge=0) # extra variance along the viewing ray
    q_c: Vec3 = (0.01, 0.01, 0.01) # m^2/s
    r_pixel: float = Field(1.0, gt=0) # px^2
    gate_probability: float = Field(0.99, gt=0, lt=1) # chi-square, 2 dof
    min_depth: float = Field(0.1, gt=0)


class MissionConfig(_Section):
    start_position: Vec3 = (0.0, 0.0, -30.0)
    start_yaw: float = 0.0
    approach_unit_m: float = Field(1.0, gt=0)
    approach_max_step_m: float = Field(32.0, gt=0)
    approach_max_iterations: int = Field(20, ge=1)
    proximity_ratio: float = Field(1.0 / 3.0, gt=0, le=1)
    tower_ratio_scale: float = Field(TOWER_DEFAULT_HEIGHT / TURBINE_DEFAULT_HEIGHT, gt=0, le=1)
    align_tolerance_px: float = Field(2.0, gt=0)
    climb_unit_m: float = Field(1.0, gt=0)
    climb_max_iterations: int = Field(40, ge=1)
    lambda_step_m: float = Field(1.0, gt=0)
    lambda_m_required: int = Field(5, ge=2)
    lambda_band: float = Field(0.02, gt=0)
    lambda_timeout_s: float = Field(60.0, gt=0)
    align_timeout_s: float = Field(30.0, gt=0)
    contour_lost_frames: int = Field(10, ge=1)
    confidence_window_s: float = Field(4.0, gt=0) # standard-detection history fed to the peak predictor
    settle_s: float = Field(1.0, ge=0)
    observe_s: float = Field(1.2, gt=0) # hover window for motion masks and altitude averaging
    v_cruise: float = Field(3.0, gt=0) # m/s, seeds the duration search
    min_duration_s: float = Field(0.5, gt=0)
    accel_fraction: float = Field(0.3, gt=0, le=1) # a_max = fraction * (T_max/m - g)
    track_duration_s: float = Field(15.0, gt=0)
    standoff_m: float = Field(10.0, ge=0)
    frame_margin_px: float = Field(24.0, ge=0)


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "scenario"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    target_class: ObjectKind
    objects: List[SceneObjectConfig] = Field(min_length=1)
    run_count: int = Field(1, ge=1)
    output_dir: Optional[str] = None
    quad: QuadParamsConfig = Field(default_factory=QuadParamsConfig)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    gains: GainsConfig = Field(default_factory=GainsConfig)
    confidence: ConfidenceConfig = Field(default_factory=ConfidenceConfig)
    tracking: TrackingConfig = Field(default_factory=TrackingConfig)
    ekf: EkfConfig = Field(default_factory=EkfConfig)
    mission: MissionConfig = Field(default_factory=MissionConfig)

    @model_validator(mode="after")
    def _target_present(self) -> "Scenario":
        if not any(o.kind == self.target_class for o in self.objects):
            raise ValueError(f"no scene object of target_class {self.target_class.value}")
        return self


class PhaseRecord(BaseModel):
    phase: str
    t_start: float
    t_end: float


class MissionReport(BaseModel):
    """Outcome of one mission run. `logs` holds the CSV tables as row lists."""
    scenario: str
    seed: int
    target_class: ObjectKind
    outcome: str = "Done" # Done | Failed
    failure_reason: Optional[str] = None
    height_method: Optional[str] = None # ContourAlign | BladeAlign
    height_estimate: Optional[float] = None
    height_truth: float
    height_samples: int = 0
    lambda_px_per_m: Optional[float] = None
    lambda_duration_s: Optional[float] = None
    depth_initial: Optional[float] = None
    depth_initial_truth: Optional[float] = None
    depth_refined: Optional[float] = None
    depth_refined_truth: Optional[float] = None
    active_confidence: Optional[float] = None
    phases: List[PhaseRecord] = []
    sim_time: float = 0.0
    logs: Dict[str, List[Dict[str, Any]]] = {}

    @property
    def succeeded(self) -> bool:
        return self.outcome == "Done"

    @property
    def height_error(self) -> Optional[float]:
        return None if self.height_estimate is None else self.height_estimate - self.height_truth
