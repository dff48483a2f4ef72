# core/exceptions.py
from typing import List, Optional, Tuple


class SimulationError(Exception):
    """Base class for every failure raised by the simulator library."""


class NumericalFault(SimulationError):
    """Integrator produced a non-finite state."""


class BehindCameraError(SimulationError):
    """Projection requested for a point with x_c <= 0."""


class FrameShapeError(SimulationError):
    pass


class InsufficientDataError(SimulationError):
    """Time series too short for period estimation."""


class NoPeriodicityError(SimulationError):
    """Time series shows no usable periodic component."""


class BladeFitError(SimulationError):
    pass


class TrackingLostError(SimulationError):
    pass


class DegenerateIntervalError(SimulationError):
    """Planning interval shorter than the solver can condition."""


class EstimatorNotReadyError(SimulationError):
    pass


class UnreliableDepthError(SimulationError):
    pass


class MetricError(SimulationError):
    pass


class PhaseFailure(SimulationError):
    """A mission phase ended in a terminal failure; `reason` goes into the report."""

    def __init__(self, reason: str, message: Optional[str] = None):
        super().__init__(message or reason)
        self.reason = reason


class ScenarioError(SimulationError):
    """Scenario file could not be parsed or validated.

    `diagnostics` holds (line, key, message) triples; line is None when the
    location is unknown.
    """

    def __init__(self, diagnostics: List[Tuple[Optional[int], str, str]], path: str = "<scenario>"):
        self.diagnostics = diagnostics
        self.path = path
        lines = [f"{path}:{line if line is not None else '?'}: {key}: {msg}" for line, key, msg in diagnostics]
        super().__init__("\n".join(lines) if lines else f"{path}: invalid scenario")
