"""Exception types shared across the milling pipeline."""

from __future__ import annotations


class BoneMillError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(BoneMillError):
    """Invalid or inconsistent configuration."""


class RowMismatch(BoneMillError):
    """Left/right detections disagree in image row beyond tolerance."""

    def __init__(self, delta: float, tolerance: float):
        self.delta = delta
        self.tolerance = tolerance
        super().__init__(f"row mismatch {delta:.3f} px exceeds tolerance {tolerance:.3f} px")


class DegenerateLandmarks(BoneMillError):
    """Landmark sets too small or collinear to fix a rigid transform."""


class OutOfView(BoneMillError):
    """A point projects outside the captured image."""


class OracleDetectionFailure(BoneMillError):
    """The drill tip could not be detected at a calibration setpoint."""


class OutOfExtent(BoneMillError):
    """Surface query outside the skull model domain."""


class InfeasibleParams(BoneMillError):
    """Skull generation parameters cannot be satisfied."""


class TooFewKnots(BoneMillError):
    pass


class DimensionMismatch(BoneMillError):
    pass


class SteppedAfterFailure(BoneMillError):
    """Milling step requested after the membrane was already damaged."""
