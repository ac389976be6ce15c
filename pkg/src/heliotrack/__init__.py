"""Camera-plane heliostat sun tracking and closed-loop simulation."""

__version__ = "0.1.0"

from .geometry import (
    BehindCamera,
    CameraModel,
    DegenerateBisector,
    backproject_pixel,
    bisector,
    pixel_error_to_mrad,
    pointing_uncertainty,
    project_direction,
)
from .ephemeris import GeoTime, OutOfEpoch, SunPosition, sun_direction

__all__ = [
    "BehindCamera",
    "CameraModel",
    "DegenerateBisector",
    "GeoTime",
    "OutOfEpoch",
    "SunPosition",
    "backproject_pixel",
    "bisector",
    "pixel_error_to_mrad",
    "pointing_uncertainty",
    "project_direction",
    "sun_direction",
]
