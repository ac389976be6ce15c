"""Tracking control laws and run comparison.

Closed loop: the tracking error measured on the camera plane (aim point
minus calibrated boresight, in pixels) is converted to per-axis angles
and fed to a proportional controller with deadband and step clamp.

Open-loop baseline: the classical supervisory controller drives the
facet normal to the sun/target bisector computed from the ephemeris,
quantized to its finite per-axis resolution.

Command convention: an axis command (du, dv) in mrad asks the mount to
shift the scene by (+du, +dv) in image coordinates, i.e. positive du
pans the optical axis toward image-left and positive dv tilts it up.
The plant maps this to compass azimuth/elevation internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ephemeris import SunPosition
from .geometry import CameraModel, bisector, direction_to_azel, normalize, pixel_error_to_mrad
from .vision import FrameAnalysis

SCADA_RESOLUTION_MRAD = 1.2  # per-axis setpoint resolution of the baseline


class NoValidFrames(ValueError):
    """Calibration input contains no frame with a sun fix."""


class SunBelowHorizon(ValueError):
    """Baseline setpoint is undefined without direct sun."""


class TimestampMismatch(ValueError):
    """Run logs to compare do not share their time base."""


@dataclass(frozen=True)
class AimingOffset:
    """Constant aiming error measured by sun-pointing calibration, px."""

    du: float
    dv: float
    sample_count: int
    sigma_u: float = 0.0
    sigma_v: float = 0.0

    @property
    def as_tuple(self) -> tuple[float, float]:
        return (self.du, self.dv)


@dataclass(frozen=True)
class ControllerConfig:
    """Pixel-space proportional loop parameters."""

    gain: float = 0.5
    deadband_px: float = 1.0
    max_step_mrad: float = 50.0

    def __post_init__(self):
        if not (0.0 < self.gain <= 1.0):
            raise ValueError(f"gain {self.gain} outside (0, 1]")
        if self.deadband_px < 0.0:
            raise ValueError("deadband must be >= 0")
        if self.max_step_mrad <= 0.0:
            raise ValueError("max step must be positive")


@dataclass(frozen=True)
class TrackingError:
    """One tracking-error sample, pixel and angular forms."""

    error_px: tuple[float, float]
    error_mrad: tuple[float, float]
    timestamp: float


def tracking_error_from_px(cam: CameraModel, error_px, timestamp: float) -> TrackingError:
    return TrackingError(
        tuple(float(e) for e in error_px),
        tuple(pixel_error_to_mrad(cam, error_px)),
        timestamp,
    )


def calibrate_aiming(frames: list[FrameAnalysis]) -> AimingOffset:
    """Mean sun-to-boresight offset over a sun-pointing image run.

    While the mount holds the classical sun-pointing setpoint, where the
    sun actually lands in the image measures every constant misalignment
    at once (pedestal tilt, reference error, mount deformation). The
    mean offset is reported with per-axis standard deviation.

    Raises:
        NoValidFrames: if no frame has a sun fix.
    """
    du = []
    dv = []
    for fa in frames:
        if fa.sun_center is None:
            continue
        du.append(fa.sun_center[0] - fa.boresight[0])
        dv.append(fa.sun_center[1] - fa.boresight[1])
    if not du:
        raise NoValidFrames("no frame in the run has a sun fix")
    n = len(du)
    return AimingOffset(
        du=float(np.mean(du)),
        dv=float(np.mean(dv)),
        sample_count=n,
        sigma_u=float(np.std(du)) if n > 1 else 0.0,
        sigma_v=float(np.std(dv)) if n > 1 else 0.0,
    )


def control_step(
    cfg: ControllerConfig, cam: CameraModel, err: TrackingError
) -> tuple[float, float]:
    """Proportional correction for one tick, in scene-shift mrad.

    Returns (0, 0) inside the deadband; otherwise -gain * error per
    axis, clamped per axis to the configured maximum step.
    """
    if max(abs(err.error_px[0]), abs(err.error_px[1])) <= cfg.deadband_px:
        return (0.0, 0.0)
    cmd = -cfg.gain * np.asarray(err.error_mrad)
    cmd = np.clip(cmd, -cfg.max_step_mrad, cfg.max_step_mrad)
    return (float(cmd[0]), float(cmd[1]))


def scada_setpoint(
    sun: SunPosition,
    heliostat_position,
    target_position,
    resolution_mrad: float = SCADA_RESOLUTION_MRAD,
) -> tuple[float, float]:
    """Facet-normal (azimuth, elevation) setpoint of the baseline tracker.

    The normal is the sun/target bisector; both angles are quantized to
    the tracker's per-axis resolution.

    Raises:
        SunBelowHorizon: when sun elevation is not positive.
    """
    if sun.elevation_deg <= 0.0:
        raise SunBelowHorizon(f"sun elevation {sun.elevation_deg:.2f} deg")
    to_target = normalize(
        np.asarray(target_position, dtype=np.float64)
        - np.asarray(heliostat_position, dtype=np.float64)
    )
    az, el = direction_to_azel(bisector(sun.direction, to_target))
    if resolution_mrad > 0:
        step = math.degrees(resolution_mrad * 1e-3)
        az = round(az / step) * step
        el = round(el / step) * step
    return (az % 360.0, el)


@dataclass(frozen=True)
class ErrorSeries:
    """Per-axis comparison of the vision loop against the baseline."""

    time_s: np.ndarray
    vision_mrad: np.ndarray  # shape (n, 2): azimuth, elevation
    baseline_mrad: np.ndarray  # shape (n, 2)
    diff_mrad: np.ndarray  # vision - baseline
    slew_deg_s: np.ndarray  # baseline-plant slew magnitude per tick
    steady_mask: np.ndarray  # ticks considered steady-state

    SPIKE_THRESHOLD_MRAD = 8.0

    @property
    def steady_state_max_mrad(self) -> tuple[float, float]:
        return self._steady_stat(np.nanmax)

    @property
    def steady_state_mean_mrad(self) -> tuple[float, float]:
        return self._steady_stat(np.nanmean)

    def _steady_stat(self, fn) -> tuple[float, float]:
        masked = np.abs(self.diff_mrad[self.steady_mask])
        out = []
        for j in (0, 1):
            col = masked[:, j] if masked.size else np.array([])
            out.append(
                math.nan if col.size == 0 or np.isnan(col).all() else float(fn(col))
            )
        return (out[0], out[1])

    @property
    def max_abs_diff_mrad(self) -> float:
        vals = np.abs(self.diff_mrad)
        if np.isnan(vals).all():
            return math.nan
        return float(np.nanmax(vals))

    def spike_times(self) -> list[float]:
        """Ticks where |vision - baseline| exceeds the spike threshold."""
        vals = np.abs(self.diff_mrad)
        vals = np.where(np.isnan(vals), 0.0, vals)
        hot = vals.max(axis=1) > self.SPIKE_THRESHOLD_MRAD
        return [float(t) for t in self.time_s[hot]]

    def spikes_confined_to_transitions(self, margin_ticks: int = 2) -> bool:
        """True when every spike happens within margin of a moving tick."""
        moving = self.slew_deg_s > 0.1
        vals = np.abs(self.diff_mrad)
        vals = np.where(np.isnan(vals), 0.0, vals)
        hot = vals.max(axis=1) > self.SPIKE_THRESHOLD_MRAD
        for idx in np.nonzero(hot)[0]:
            lo = max(0, idx - margin_ticks)
            hi = min(len(moving), idx + margin_ticks + 1)
            if not moving[lo:hi].any():
                return False
        return True

    def to_csv(self) -> str:
        lines = ["time_s,axis,vision_err_mrad,scada_err_mrad,diff_mrad"]
        for i, t in enumerate(self.time_s):
            for j, axis in enumerate(("az", "el")):
                lines.append(
                    f"{t:.3f},{axis},{_fmt(self.vision_mrad[i, j])},"
                    f"{_fmt(self.baseline_mrad[i, j])},{_fmt(self.diff_mrad[i, j])}"
                )
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6f}"


def compare_runs(vision_log, baseline_log) -> ErrorSeries:
    """Align two run logs tick by tick and difference their errors.

    Raises:
        TimestampMismatch: when the logs do not share timestamps.
    """
    t_v = np.asarray([r.time_s for r in vision_log.records])
    t_b = np.asarray([r.time_s for r in baseline_log.records])
    if t_v.shape != t_b.shape or not np.allclose(t_v, t_b):
        raise TimestampMismatch("run logs do not share timestamps")
    vision = np.array(
        [
            r.error_axis_mrad if r.error_axis_mrad is not None else (math.nan, math.nan)
            for r in vision_log.records
        ]
    )
    base = np.array(
        [
            r.error_axis_mrad if r.error_axis_mrad is not None else (math.nan, math.nan)
            for r in baseline_log.records
        ]
    )
    slew = np.zeros(len(t_b))
    if len(t_b) > 1:
        dt = np.maximum(np.diff(t_b), 1e-9)
        for log in (baseline_log, vision_log):
            poses = np.array(
                [(r.azimuth_deg, r.elevation_deg) for r in log.records]
            )
            d = np.abs(np.diff(poses, axis=0))
            d[:, 0] = np.minimum(d[:, 0], 360.0 - d[:, 0])  # azimuth wrap
            slew[1:] = np.maximum(slew[1:], d.max(axis=1) / dt)
    moving = slew > 0.02
    # steady ticks: neither plant moved recently
    steady = ~moving.copy()
    for k in np.nonzero(moving)[0]:
        steady[max(0, k - 2) : k + 3] = False
    return ErrorSeries(
        time_s=t_v,
        vision_mrad=vision,
        baseline_mrad=base,
        diff_mrad=vision - base,
        slew_deg_s=slew,
        steady_mask=steady,
    )
