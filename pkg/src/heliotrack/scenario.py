"""Scenario files: TOML on disk -> ScenarioConfig.

Bundled scenarios live in the package's scenarios/ directory and can be
referenced by bare name (e.g. "target_track") anywhere a path is
accepted.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from importlib import resources
from pathlib import Path

from .control import ControllerConfig
from .ephemeris import GeoTime
from .fieldsim import (
    ConfigError,
    HeliostatState,
    OutputConfig,
    ScenarioConfig,
    TimelineEntry,
)
from .geometry import CameraModel
from .render import CloudSpec, NeighborSpec, Scene

BUNDLED = ("calibration_sun_point", "target_track", "target_track_clean", "cloud_transit")


def bundled_scenario_path(name: str) -> Path:
    return Path(resources.files("heliotrack").joinpath(f"scenarios/{name}.toml"))


def resolve_scenario_path(ref: str) -> Path:
    """Accept a file path or the bare name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if ref in BUNDLED:
        return bundled_scenario_path(ref)
    raise ConfigError("scenario", f"no such file or bundled scenario: {ref}")


def load_scenario(ref: str, seed_override: int | None = None) -> tuple[ScenarioConfig, bytes]:
    """Load and validate a scenario; returns (config, raw file bytes)."""
    path = resolve_scenario_path(ref)
    raw = path.read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(path), f"TOML parse error: {e}") from e
    cfg = scenario_from_dict(doc, name_fallback=path.stem)
    if seed_override is not None:
        cfg = _with_seed(cfg, seed_override)
    return cfg, raw


def _with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed, scene=replace(cfg.scene, seed=seed))


_REQUIRED = object()


def _get(doc: dict, loc: str, key: str, type_=None, default=_REQUIRED):
    if key not in doc:
        if default is _REQUIRED:
            raise ConfigError(f"{loc}.{key}", "missing required field")
        return default
    val = doc[key]
    if type_ is not None and not isinstance(val, type_):
        raise ConfigError(f"{loc}.{key}", f"expected {type_}, got {type(val).__name__}")
    return val


def _vec3(doc: dict, loc: str, key: str, default=None):
    val = _get(doc, loc, key, list, default if default is not None else [0.0, 0.0, 0.0])
    if len(val) != 3:
        raise ConfigError(f"{loc}.{key}", "expected 3 numbers")
    return tuple(float(x) for x in val)


def scenario_from_dict(doc: dict, name_fallback: str = "scenario") -> ScenarioConfig:
    name = doc.get("name", name_fallback)
    try:
        site_doc = _get(doc, name, "site", dict)
        site = GeoTime.from_iso(
            float(_get(site_doc, "site", "latitude_deg")),
            float(_get(site_doc, "site", "longitude_deg")),
            _get(site_doc, "site", "start_utc", str),
        )

        cam_doc = _get(doc, name, "camera", dict)
        camera = CameraModel(
            int(_get(cam_doc, "camera", "width_px")),
            int(_get(cam_doc, "camera", "height_px")),
            float(_get(cam_doc, "camera", "sensor_w_mm")),
            float(_get(cam_doc, "camera", "sensor_h_mm")),
            float(_get(cam_doc, "camera", "focal_mm")),
        )

        hel_doc = _get(doc, name, "heliostat", dict)
        position = _vec3(hel_doc, "heliostat", "position_m")
        tilt = _get(hel_doc, "heliostat", "pedestal_tilt_mrad", list, [0.0, 0.0])
        heliostat = HeliostatState(
            position=position,
            azimuth_deg=0.0,
            elevation_deg=45.0,
            az_rate_deg_s=float(
                _get(hel_doc, "heliostat", "azimuth_rate_deg_s", default=0.6)
            ),
            el_rate_deg_s=float(
                _get(hel_doc, "heliostat", "elevation_rate_deg_s", default=0.3)
            ),
            pedestal_tilt_mrad=(float(tilt[0]), float(tilt[1])),
            deformation_gain_mrad_per_deg_s=float(
                _get(hel_doc, "heliostat", "deformation_gain_mrad_per_deg_s", default=0.0)
            ),
            encoder_quantization_mrad=float(
                _get(hel_doc, "heliostat", "encoder_quantization_mrad", default=0.0)
            ),
            refraction_offset_mrad=float(
                _get(hel_doc, "heliostat", "refraction_offset_mrad", default=0.0)
            ),
            jitter_mrad=float(_get(hel_doc, "heliostat", "jitter_mrad", default=0.0)),
        )

        scene_doc = _get(doc, name, "scene", dict)
        seed = int(_get(doc, name, "seed", default=0))
        neighbors = tuple(
            NeighborSpec(
                position=_vec3(n, f"scene.neighbors[{i}]", "position_m"),
                width_m=float(_get(n, f"scene.neighbors[{i}]", "width_m", default=10.0)),
                height_m=float(
                    _get(n, f"scene.neighbors[{i}]", "height_m", default=10.0)
                ),
            )
            for i, n in enumerate(scene_doc.get("neighbors", []))
        )
        clouds = tuple(
            CloudSpec(
                azimuth_deg=float(_get(c, f"scene.clouds[{i}]", "azimuth_deg")),
                elevation_deg=float(_get(c, f"scene.clouds[{i}]", "elevation_deg")),
                az_rate_deg_s=float(
                    _get(c, f"scene.clouds[{i}]", "azimuth_rate_deg_s", default=0.0)
                ),
                el_rate_deg_s=float(
                    _get(c, f"scene.clouds[{i}]", "elevation_rate_deg_s", default=0.0)
                ),
                radius_mrad=float(
                    _get(c, f"scene.clouds[{i}]", "radius_mrad", default=25.0)
                ),
                aspect=float(_get(c, f"scene.clouds[{i}]", "aspect", default=0.6)),
                alpha=float(_get(c, f"scene.clouds[{i}]", "alpha", default=0.85)),
            )
            for i, c in enumerate(scene_doc.get("clouds", []))
        )
        scene = Scene(
            site=site,
            tracker_position=position,
            target_position=_vec3(scene_doc, "scene", "target_position_m"),
            target_width_m=float(_get(scene_doc, "scene", "target_width_m", default=8.0)),
            target_height_m=float(
                _get(scene_doc, "scene", "target_height_m", default=6.0)
            ),
            neighbors=neighbors,
            clouds=clouds,
            seed=seed,
            noise_dn=int(_get(scene_doc, "scene", "noise_dn", default=0)),
        )

        ctl_doc = doc.get("controller", {})
        controller = ControllerConfig(
            gain=float(_get(ctl_doc, "controller", "gain", default=0.5)),
            deadband_px=float(_get(ctl_doc, "controller", "deadband_px", default=1.0)),
            max_step_mrad=float(
                _get(ctl_doc, "controller", "max_step_mrad", default=50.0)
            ),
        )

        calib_doc = doc.get("calibration", {})
        calibration = (
            float(_get(calib_doc, "calibration", "du_px", default=0.0)),
            float(_get(calib_doc, "calibration", "dv_px", default=0.0)),
        )

        entries = []
        for i, e in enumerate(doc.get("timeline", [])):
            loc = f"timeline[{i}]"
            mode = _get(e, loc, "mode", str)
            if mode not in ("stow", "sun_track", "target_track", "manual"):
                raise ConfigError(f"{loc}.mode", f"unknown mode {mode!r}")
            entries.append(
                TimelineEntry(
                    t_s=float(_get(e, loc, "t_s")),
                    mode=mode,
                    azimuth_deg=(
                        float(e["azimuth_deg"]) if "azimuth_deg" in e else None
                    ),
                    elevation_deg=(
                        float(e["elevation_deg"]) if "elevation_deg" in e else None
                    ),
                    azimuth_offset_mrad=float(e.get("azimuth_offset_mrad", 0.0)),
                    elevation_offset_mrad=float(e.get("elevation_offset_mrad", 0.0)),
                )
            )

        init = _get(hel_doc, "heliostat", "initial_offset_mrad", list, [0.0, 0.0])
        out_doc = doc.get("output", {})
        return ScenarioConfig(
            name=name,
            site=site,
            camera=camera,
            scene=scene,
            heliostat=heliostat,
            controller=controller,
            timeline=tuple(entries),
            tick_s=float(_get(doc, name, "tick_s", default=1.0)),
            duration_s=float(_get(doc, name, "duration_s", default=200.0)),
            seed=seed,
            calibration_px=calibration,
            initial_offset_mrad=(float(init[0]), float(init[1])),
            stow_azimuth_deg=float(
                _get(hel_doc, "heliostat", "stow_azimuth_deg", default=0.0)
            ),
            stow_elevation_deg=float(
                _get(hel_doc, "heliostat", "stow_elevation_deg", default=10.0)
            ),
            output=OutputConfig(
                frame_stride=int(_get(out_doc, "output", "frame_stride", default=0))
            ),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(name, str(e)) from e
