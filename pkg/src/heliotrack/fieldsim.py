"""Two-axis heliostat plant, disturbances, and the scenario engine.

run_scenario() executes a timeline on two identical plants: one closed
on the camera (render -> detect -> analyze -> pixel P-control), one on
the classical ephemeris baseline. Both errors are logged per tick so
the runs can be differenced.

Mount convention: azimuth compass clockwise from North, elevation up
from the horizon, degrees. The optical axis may differ from the encoder
pose through pedestal tilt, slew deformation, refraction offset, and
pose jitter; only the camera sees those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (
    ControllerConfig,
    TrackingError,
    control_step,
    scada_setpoint,
    tracking_error_from_px,
)
from .ephemeris import GeoTime, sun_direction
from .geometry import (
    CameraModel,
    azel_to_direction,
    bisector,
    camera_basis,
    direction_to_azel,
    normalize,
)
from .render import CloudSpec, NeighborSpec, Scene, render
from .vision import ClassicalDetector, analyze_frame, best_detection, track_clouds

MODES = ("stow", "sun_track", "target_track", "manual")


class ConfigError(ValueError):
    """Scenario configuration problem, with the offending location."""

    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


@dataclass(frozen=True)
class HeliostatState:
    """Mount pose plus disturbance parameters of one heliostat."""

    position: tuple[float, float, float]
    azimuth_deg: float
    elevation_deg: float
    az_rate_deg_s: float = 0.6  # placeholder drive rates, configurable
    el_rate_deg_s: float = 0.3
    pedestal_tilt_mrad: tuple[float, float] = (0.0, 0.0)  # apparent (u, v)
    deformation_gain_mrad_per_deg_s: float = 0.0
    encoder_quantization_mrad: float = 0.0
    refraction_offset_mrad: float = 0.0
    jitter_mrad: float = 0.0
    mode: str = "stow"
    az_slew_deg_s: float = 0.0
    el_slew_deg_s: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.elevation_deg <= 90.0):
            raise ValueError(f"elevation {self.elevation_deg} outside [0, 90]")
        if self.az_rate_deg_s <= 0 or self.el_rate_deg_s <= 0:
            raise ValueError("axis rates must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


def _wrap_delta_deg(delta: float) -> float:
    return (delta + 180.0) % 360.0 - 180.0


def step(state: HeliostatState, command_azel, dt: float) -> HeliostatState:
    """Move the mount toward the commanded pose, rate-limited per axis."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd_az, cmd_el = command_azel
    d_az = np.clip(
        _wrap_delta_deg(cmd_az - state.azimuth_deg),
        -state.az_rate_deg_s * dt,
        state.az_rate_deg_s * dt,
    )
    d_el = np.clip(
        np.clip(cmd_el, 0.0, 90.0) - state.elevation_deg,
        -state.el_rate_deg_s * dt,
        state.el_rate_deg_s * dt,
    )
    az = (state.azimuth_deg + float(d_az)) % 360.0
    el = float(state.elevation_deg + d_el)
    if state.encoder_quantization_mrad > 0:
        q = math.degrees(state.encoder_quantization_mrad * 1e-3)
        az = round(az / q) * q % 360.0
        el = min(90.0, max(0.0, round(el / q) * q))
        d_az = _wrap_delta_deg(az - state.azimuth_deg)
        d_el = el - state.elevation_deg
    return replace(
        state,
        azimuth_deg=az,
        elevation_deg=el,
        az_slew_deg_s=float(d_az) / dt,
        el_slew_deg_s=float(d_el) / dt,
    )


def optical_axis(state: HeliostatState, rng: np.random.Generator | None = None) -> np.ndarray:
    """Actual facet-normal/camera direction including disturbances.

    The scene appears shifted by +pedestal_tilt_mrad in image terms; a
    slewing mount drags the axis behind the encoder pose; the optional
    refraction offset raises the whole scene; jitter is white noise the
    encoders never see.
    """
    base = azel_to_direction(state.azimuth_deg, state.elevation_deg)
    x_c, y_c, _ = camera_basis(base)
    cos_el = max(math.cos(math.radians(state.elevation_deg)), 1e-9)
    tilt_u, tilt_v = state.pedestal_tilt_mrad
    off_u = -tilt_u * 1e-3
    off_v = -tilt_v * 1e-3
    k = state.deformation_gain_mrad_per_deg_s * 1e-3
    off_u += -k * state.az_slew_deg_s * cos_el
    off_v += k * state.el_slew_deg_s
    off_v += state.refraction_offset_mrad * 1e-3
    if state.jitter_mrad > 0 and rng is not None:
        off_u += rng.normal(0.0, state.jitter_mrad * 1e-3)
        off_v += rng.normal(0.0, state.jitter_mrad * 1e-3)
    return normalize(base + off_u * x_c + off_v * y_c)


@dataclass(frozen=True)
class TimelineEntry:
    t_s: float
    mode: str
    azimuth_deg: float | None = None
    elevation_deg: float | None = None
    azimuth_offset_mrad: float = 0.0
    elevation_offset_mrad: float = 0.0


@dataclass(frozen=True)
class OutputConfig:
    frame_stride: int = 0  # 0: no frames written


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one reproducible run needs."""

    name: str
    site: GeoTime
    camera: CameraModel
    scene: Scene
    heliostat: HeliostatState
    controller: ControllerConfig
    timeline: tuple[TimelineEntry, ...]
    tick_s: float = 1.0
    duration_s: float = 200.0
    seed: int = 0
    calibration_px: tuple[float, float] = (0.0, 0.0)
    initial_offset_mrad: tuple[float, float] = (0.0, 0.0)
    stow_azimuth_deg: float = 0.0
    stow_elevation_deg: float = 10.0
    output: OutputConfig = OutputConfig()

    def __post_init__(self):
        if self.tick_s <= 0:
            raise ConfigError("tick_s", "must be positive")
        if self.duration_s < 0:
            raise ConfigError("duration_s", "must be >= 0")
        times = [e.t_s for e in self.timeline]
        if times != sorted(times):
            raise ConfigError("timeline", "entries must be time-ordered")
        if not self.timeline and self.duration_s > 0:
            raise ConfigError("timeline", "at least one entry required")


@dataclass(frozen=True)
class TickRecord:
    """One tick of one control loop."""

    time_s: float
    mode: str
    cmd_azimuth_deg: float
    cmd_elevation_deg: float
    azimuth_deg: float
    elevation_deg: float
    axis_azimuth_deg: float
    axis_elevation_deg: float
    error_axis_mrad: tuple[float, float] | None = None
    error_px: tuple[float, float] | None = None
    boresight_px: tuple[float, float] | None = None
    sun_px: tuple[float, float] | None = None
    target_px: tuple[float, float] | None = None
    aim_px: tuple[float, float] | None = None
    shadow: bool = False
    blocked: bool = False
    cloud_tto_s: float | None = None
    n_detections: int = 0


CSV_COLUMNS = [
    "time_s", "mode", "cmd_az_deg", "cmd_el_deg", "az_deg", "el_deg",
    "axis_az_deg", "axis_el_deg", "err_az_mrad", "err_el_mrad",
    "err_px_u", "err_px_v", "boresight_u", "boresight_v",
    "sun_px_u", "sun_px_v", "target_px_u", "target_px_v",
    "aim_px_u", "aim_px_v", "shadow", "blocked", "cloud_tto_s",
    "n_detections",
]


@dataclass
class RunLog:
    """Per-tick records of one control loop over a scenario."""

    loop: str  # "vision" or "scada"
    records: list[TickRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        def f(x, spec="{:.6f}"):
            if x is None:
                return ""
            return spec.format(x)

        lines = [",".join(CSV_COLUMNS)]
        for r in self.records:
            err = r.error_axis_mrad or (None, None)
            epx = r.error_px or (None, None)
            bor = r.boresight_px or (None, None)
            spx = r.sun_px or (None, None)
            tpx = r.target_px or (None, None)
            apx = r.aim_px or (None, None)
            lines.append(
                ",".join(
                    [
                        f(r.time_s, "{:.3f}"), r.mode,
                        f(r.cmd_azimuth_deg), f(r.cmd_elevation_deg),
                        f(r.azimuth_deg), f(r.elevation_deg),
                        f(r.axis_azimuth_deg), f(r.axis_elevation_deg),
                        f(err[0]), f(err[1]), f(epx[0]), f(epx[1]),
                        f(bor[0]), f(bor[1]), f(spx[0]), f(spx[1]),
                        f(tpx[0]), f(tpx[1]), f(apx[0]), f(apx[1]),
                        "1" if r.shadow else "0", "1" if r.blocked else "0",
                        f(r.cloud_tto_s, "{:.3f}"), str(r.n_detections),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str, loop: str = "vision") -> "RunLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        if header != CSV_COLUMNS:
            raise ValueError("unrecognized run log header")
        log = RunLog(loop)

        def opt(val):
            return float(val) if val != "" else None

        def pair(u, v):
            return (float(u), float(v)) if u != "" and v != "" else None

        for ln in lines[1:]:
            c = dict(zip(CSV_COLUMNS, ln.split(",")))
            log.records.append(
                TickRecord(
                    time_s=float(c["time_s"]),
                    mode=c["mode"],
                    cmd_azimuth_deg=float(c["cmd_az_deg"]),
                    cmd_elevation_deg=float(c["cmd_el_deg"]),
                    azimuth_deg=float(c["az_deg"]),
                    elevation_deg=float(c["el_deg"]),
                    axis_azimuth_deg=float(c["axis_az_deg"]),
                    axis_elevation_deg=float(c["axis_el_deg"]),
                    error_axis_mrad=pair(c["err_az_mrad"], c["err_el_mrad"]),
                    error_px=pair(c["err_px_u"], c["err_px_v"]),
                    boresight_px=pair(c["boresight_u"], c["boresight_v"]),
                    sun_px=pair(c["sun_px_u"], c["sun_px_v"]),
                    target_px=pair(c["target_px_u"], c["target_px_v"]),
                    aim_px=pair(c["aim_px_u"], c["aim_px_v"]),
                    shadow=c["shadow"] == "1",
                    blocked=c["blocked"] == "1",
                    cloud_tto_s=opt(c["cloud_tto_s"]),
                    n_detections=int(c["n_detections"]),
                )
            )
        return log


def ideal_aim_azel(cfg: ScenarioConfig, t_s: float) -> tuple[float, float] | None:
    """Continuous (unquantized) facet-normal angles aiming at the target."""
    sun = sun_direction(cfg.site.shifted(t_s))
    if not sun.above_horizon:
        return None
    to_target = normalize(
        np.asarray(cfg.scene.target_position)
        - np.asarray(cfg.heliostat.position)
    )
    return direction_to_azel(bisector(sun.direction, to_target))


def vision_error_to_axis_mrad(
    cam: CameraModel,
    pose_azel: tuple[float, float],
    aim_px,
    boresight_px,
) -> tuple[float, float]:
    """Exact mount-axis error equivalent of an image aim offset.

    Backprojects the aim point and the boresight through the camera at
    the encoder pose and differences their world azimuth/elevation, so
    large offsets compare one-to-one with encoder-based errors.
    """
    from .geometry import backproject_pixel, camera_to_world

    axis = azel_to_direction(*pose_azel)
    w_aim = camera_to_world(axis, backproject_pixel(cam, aim_px))
    w_ref = camera_to_world(axis, backproject_pixel(cam, boresight_px))
    az_a, el_a = direction_to_azel(w_aim)
    az_r, el_r = direction_to_azel(w_ref)
    to_mrad = 1e3 * math.pi / 180.0
    return (
        _wrap_delta_deg(az_a - az_r) * to_mrad,
        (el_a - el_r) * to_mrad,
    )


class _LoopState:
    """Mutable bookkeeping of one control loop while a scenario runs."""

    def __init__(self, state: HeliostatState):
        self.state = state
        self.pending_delta = (0.0, 0.0)  # scene-shift mrad from controller
        self.cloud_tracks: list = []
        self.manual_hold: tuple[float, float] | None = None


def _timeline_mode_at(timeline, t_s: float) -> TimelineEntry:
    active = timeline[0]
    for entry in timeline:
        if entry.t_s <= t_s:
            active = entry
        else:
            break
    return active


def run_scenario(cfg: ScenarioConfig, frame_sink=None):
    """Execute the scenario; returns (vision RunLog, baseline RunLog).

    frame_sink, when given, is called as frame_sink(tick_index, image)
    for every tick selected by the output frame stride.
    """
    cam = cfg.camera
    detector = ClassicalDetector()
    n_ticks = int(round(cfg.duration_s / cfg.tick_s))

    start_ref = _initial_reference(cfg)
    if start_ref is None:
        start = (cfg.stow_azimuth_deg, cfg.stow_elevation_deg)
    else:
        off_az, off_el = cfg.initial_offset_mrad
        cos_el = max(math.cos(math.radians(start_ref[1])), 1e-9)
        start = (
            (start_ref[0] + math.degrees(off_az * 1e-3) / cos_el) % 360.0,
            min(90.0, max(0.0, start_ref[1] + math.degrees(off_el * 1e-3))),
        )
    base_state = replace(
        cfg.heliostat, azimuth_deg=start[0], elevation_deg=start[1]
    )

    vision = _LoopState(base_state)
    scada = _LoopState(replace(base_state))
    vision_rng = np.random.default_rng((cfg.seed, 101))
    scada_rng = np.random.default_rng((cfg.seed, 202))
    vision_log = RunLog("vision")
    scada_log = RunLog("scada")
    active_entry: TimelineEntry | None = None

    for k in range(n_ticks):
        t = k * cfg.tick_s
        sun = sun_direction(cfg.site.shifted(t))
        entry = _timeline_mode_at(cfg.timeline, t)
        if entry is not active_entry:
            active_entry = entry
            vision.manual_hold = scada.manual_hold = None
        mode = entry.mode
        ideal = ideal_aim_azel(cfg, t)

        # measure first: render at the pose established by the last tick
        axis = optical_axis(vision.state, vision_rng)
        img, _truth = render(cfg.scene, cam, axis, t)
        if frame_sink is not None and cfg.output.frame_stride > 0:
            if k % cfg.output.frame_stride == 0:
                frame_sink(k, img)
        dets = detector.detect(img)
        sun_det = best_detection(dets, "sun")
        vision.cloud_tracks = track_clouds(
            vision.cloud_tracks, dets, cfg.tick_s,
            sun_det.bbox if sun_det else None,
        )
        fa = analyze_frame(dets, cam, cfg.calibration_px, tuple(vision.cloud_tracks))

        v_err_axis = None
        delta = (0.0, 0.0)
        if fa.tracking_error_px is not None:
            if mode == "target_track":
                err = tracking_error_from_px(cam, fa.tracking_error_px, t)
                delta = control_step(cfg.controller, cam, err)
            pose = (vision.state.azimuth_deg, vision.state.elevation_deg)
            v_err_axis = vision_error_to_axis_mrad(
                cam, pose, fa.aim_point, fa.boresight
            )

        axis_azel = direction_to_azel(axis)
        ttos = [
            tr.time_to_occlusion
            for tr in vision.cloud_tracks
            if tr.time_to_occlusion is not None
        ]
        s_axis_azel = direction_to_azel(optical_axis(scada.state, scada_rng))
        s_err = None
        if ideal is not None:
            s_err = (
                _wrap_delta_deg(ideal[0] - scada.state.azimuth_deg)
                * 1e3 * math.pi / 180.0,
                (ideal[1] - scada.state.elevation_deg) * 1e3 * math.pi / 180.0,
            )

        # decide setpoints for this tick's motion
        if mode == "stow" or (mode != "manual" and not sun.above_horizon):
            v_cmd = s_cmd = (cfg.stow_azimuth_deg, cfg.stow_elevation_deg)
        elif mode == "sun_track":
            v_cmd = s_cmd = (sun.azimuth_deg, sun.elevation_deg)
        elif mode == "manual":
            if vision.manual_hold is None:
                hold = _resolve_manual(entry, ideal)
                vision.manual_hold = scada.manual_hold = hold
            v_cmd = s_cmd = vision.manual_hold
        else:  # target_track
            s_cmd = scada_setpoint(
                sun, cfg.heliostat.position, cfg.scene.target_position
            )
            du, dv = delta
            el = vision.state.elevation_deg
            cos_el = max(math.cos(math.radians(el)), 1e-9)
            v_cmd = (
                (vision.state.azimuth_deg - math.degrees(du * 1e-3) / cos_el) % 360.0,
                min(90.0, max(0.0, el + math.degrees(dv * 1e-3))),
            )

        vision_log.records.append(
            TickRecord(
                time_s=t,
                mode=mode,
                cmd_azimuth_deg=v_cmd[0],
                cmd_elevation_deg=v_cmd[1],
                azimuth_deg=vision.state.azimuth_deg,
                elevation_deg=vision.state.elevation_deg,
                axis_azimuth_deg=axis_azel[0],
                axis_elevation_deg=axis_azel[1],
                error_axis_mrad=v_err_axis,
                error_px=fa.tracking_error_px,
                boresight_px=fa.boresight,
                sun_px=fa.sun_center,
                target_px=fa.target_center,
                aim_px=fa.aim_point,
                shadow=fa.shadow,
                blocked=fa.blocked,
                cloud_tto_s=min(ttos) if ttos else None,
                n_detections=len(dets),
            )
        )
        scada_log.records.append(
            TickRecord(
                time_s=t,
                mode=mode,
                cmd_azimuth_deg=s_cmd[0],
                cmd_elevation_deg=s_cmd[1],
                azimuth_deg=scada.state.azimuth_deg,
                elevation_deg=scada.state.elevation_deg,
                axis_azimuth_deg=s_axis_azel[0],
                axis_elevation_deg=s_axis_azel[1],
                error_axis_mrad=s_err,
            )
        )

        vision.state = replace(step(vision.state, v_cmd, cfg.tick_s), mode=mode)
        scada.state = replace(step(scada.state, s_cmd, cfg.tick_s), mode=mode)
    return vision_log, scada_log


def _initial_reference(cfg: ScenarioConfig) -> tuple[float, float] | None:
    """Pose the mount starts from: first timeline entry's setpoint at t=0."""
    if not cfg.timeline:
        return None
    entry = cfg.timeline[0]
    sun = sun_direction(cfg.site)
    if entry.mode == "stow" or not sun.above_horizon:
        return (cfg.stow_azimuth_deg, cfg.stow_elevation_deg)
    if entry.mode == "sun_track":
        return (sun.azimuth_deg, sun.elevation_deg)
    ideal = ideal_aim_azel(cfg, 0.0)
    if entry.mode == "manual":
        return _resolve_manual(entry, ideal)
    return ideal


def _resolve_manual(entry: TimelineEntry, ideal) -> tuple[float, float]:
    if entry.azimuth_deg is not None and entry.elevation_deg is not None:
        return (entry.azimuth_deg % 360.0, min(90.0, max(0.0, entry.elevation_deg)))
    if ideal is None:
        raise ConfigError(
            f"timeline t={entry.t_s}", "manual offset needs the sun above horizon"
        )
    cos_el = max(math.cos(math.radians(ideal[1])), 1e-9)
    return (
        (ideal[0] + math.degrees(entry.azimuth_offset_mrad * 1e-3) / cos_el) % 360.0,
        min(
            90.0,
            max(0.0, ideal[1] + math.degrees(entry.elevation_offset_mrad * 1e-3)),
        ),
    )
