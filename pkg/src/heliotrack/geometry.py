"""Pinhole camera geometry for camera-plane sun tracking.

Coordinate conventions (used everywhere in this package):

World frame (right-handed East-North-Up):
  - x: East, y: North, z: Up.
  - Azimuth is measured clockwise from North (compass), elevation up
    from the horizon.

Camera frame (right-handed, standard computer vision):
  - z: optical axis, pointing out of the camera into the scene. The
    optical axis coincides with the heliostat facet normal.
  - x: image-right, y: image-down.

Image frame:
  - Origin top-left, u rightward, v downward, sub-pixel float
    coordinates. The center of pixel (row i, col j) is (j+0.5, i+0.5).
    Rounding happens only at rasterization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class NonSquarePixels(UserWarning):
    """Per-axis pixel pitches differ by more than 1%."""


class BehindCamera(ValueError):
    """Direction points away from the image plane (z <= 0 in camera frame)."""


class DegenerateBisector(ValueError):
    """Bisector of two antiparallel (or zero) directions is undefined."""


def normalize(v) -> np.ndarray:
    """Return v scaled to unit length as a float64 array."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def azel_to_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit ENU direction for compass azimuth (CW from North) and elevation."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.array(
        [np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)]
    )


def direction_to_azel(d) -> tuple[float, float]:
    """Inverse of azel_to_direction; azimuth in [0, 360)."""
    d = normalize(d)
    el = np.degrees(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    az = np.degrees(np.arctan2(d[0], d[1])) % 360.0
    return float(az), float(el)


@dataclass(frozen=True)
class CameraModel:
    """Intrinsic geometry of the tracker camera.

    Pixel pitch is kept per axis; the nominal pitch used by the
    single-number uncertainty formula is the horizontal one.
    """

    width_px: int
    height_px: int
    sensor_w_mm: float
    sensor_h_mm: float
    focal_mm: float
    principal_point: tuple[float, float] = None  # defaults to image center

    def __post_init__(self):
        if min(self.width_px, self.height_px) <= 0:
            raise ValueError("image dimensions must be positive")
        if min(self.sensor_w_mm, self.sensor_h_mm, self.focal_mm) <= 0:
            raise ValueError("sensor and focal dimensions must be positive")
        if self.principal_point is None:
            object.__setattr__(
                self,
                "principal_point",
                (self.width_px / 2.0, self.height_px / 2.0),
            )
        cu, cv = self.principal_point
        if not (0.0 <= cu <= self.width_px and 0.0 <= cv <= self.height_px):
            raise ValueError("principal point must lie inside the image")
        pu, pv = self.pixel_pitch_mm
        if abs(pu - pv) / max(pu, pv) > 0.01:
            # Real sensors binned to non-native resolutions break the
            # square-pixel assumption; projection stays correct because
            # every conversion uses the per-axis pitch.
            warnings.warn(
                f"pixel pitch differs by {abs(pu - pv) / max(pu, pv):.1%} "
                "between axes; square-pixel approximations will be off",
                NonSquarePixels,
                stacklevel=2,
            )

    @property
    def pixel_pitch_mm(self) -> tuple[float, float]:
        """(horizontal, vertical) size of one pixel on the sensor, mm."""
        return (self.sensor_w_mm / self.width_px, self.sensor_h_mm / self.height_px)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.principal_point, dtype=np.float64)

    @property
    def mrad_per_px(self) -> tuple[float, float]:
        """Small-angle pixel scale per axis, mrad/px."""
        pu, pv = self.pixel_pitch_mm
        return (
            1e3 * float(np.arctan(pu / self.focal_mm)),
            1e3 * float(np.arctan(pv / self.focal_mm)),
        )


def project_direction(cam: CameraModel, direction) -> np.ndarray:
    """Project a camera-frame unit direction onto the image plane.

    Gnomonic pinhole projection. The returned point may lie outside the
    image bounds; visibility is the caller's concern.

    Raises:
        BehindCamera: if the direction has z <= 0.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d[2] <= 0.0:
        raise BehindCamera(f"direction z={d[2]:.6g} is not in front of the camera")
    pu, pv = cam.pixel_pitch_mm
    cu, cv = cam.principal_point
    u = cu + cam.focal_mm * (d[0] / d[2]) / pu
    v = cv + cam.focal_mm * (d[1] / d[2]) / pv
    return np.array([u, v])


def backproject_pixel(cam: CameraModel, pixel) -> np.ndarray:
    """Unit camera-frame direction whose projection is the given pixel."""
    p = np.asarray(pixel, dtype=np.float64)
    pu, pv = cam.pixel_pitch_mm
    cu, cv = cam.principal_point
    return normalize(
        [(p[0] - cu) * pu, (p[1] - cv) * pv, cam.focal_mm]
    )


def pointing_uncertainty(cam: CameraModel) -> float:
    """Angular size of one pixel at the image center, in mrad.

    This is the resolution floor of any aim-point estimate made on the
    camera plane: arctan(pitch / focal), with the horizontal pitch as
    the nominal pixel size.
    """
    pu, _ = cam.pixel_pitch_mm
    return 1e3 * float(np.arctan(pu / cam.focal_mm))


def pixel_error_to_mrad(cam: CameraModel, delta_px) -> np.ndarray:
    """Convert a pixel offset 2-vector to per-axis angles in mrad."""
    d = np.asarray(delta_px, dtype=np.float64)
    pu, pv = cam.pixel_pitch_mm
    return 1e3 * np.arctan(
        np.array([d[0] * pu, d[1] * pv]) / cam.focal_mm
    )


def bisector(a, b) -> np.ndarray:
    """Unit vector at equal angles to unit vectors a and b.

    For a heliostat this is the facet normal that reflects the incoming
    direction a onto the outgoing direction b.

    Raises:
        DegenerateBisector: if a and b are (numerically) antiparallel.
    """
    a = normalize(a)
    b = normalize(b)
    s = a + b
    n = np.linalg.norm(s)
    if n < 1e-9:
        raise DegenerateBisector("directions are antiparallel; bisector undefined")
    return s / n


def camera_basis(axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (right, down, forward) camera basis for a world-frame axis.

    Image-right is horizontal (axis x world-up); image-down completes the
    right-handed set. Falls back to East as image-right when the axis is
    within ~0.06 deg of vertical.
    """
    z = normalize(axis)
    x = np.cross(z, np.array([0.0, 0.0, 1.0]))
    nx = np.linalg.norm(x)
    if nx < 1e-3:
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / nx
    y = np.cross(z, x)
    return x, y, z


def world_to_camera(axis, direction) -> np.ndarray:
    """Express a world-frame direction in the camera frame of an axis."""
    x, y, z = camera_basis(axis)
    d = np.asarray(direction, dtype=np.float64)
    return np.array([d @ x, d @ y, d @ z])


def camera_to_world(axis, direction_cam) -> np.ndarray:
    """Inverse of world_to_camera."""
    x, y, z = camera_basis(axis)
    d = np.asarray(direction_cam, dtype=np.float64)
    return d[0] * x + d[1] * y + d[2] * z
