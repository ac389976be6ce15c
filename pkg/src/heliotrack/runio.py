"""Run directory persistence: CSV logs, PPM frames, manifest JSON.

A run directory is self-describing: manifest.json lists every artifact,
the scenario hash, and summary statistics. Identical scenario bytes and
seed produce identical run ids and byte-identical artifacts.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from pathlib import Path

from .control import ErrorSeries, compare_runs
from .fieldsim import RunLog, ScenarioConfig, run_scenario
from .vision import write_ppm

MANIFEST_NAME = "manifest.json"


def run_id_for(scenario_bytes: bytes, seed: int) -> str:
    h = hashlib.sha256()
    h.update(scenario_bytes)
    h.update(str(seed).encode())
    return h.hexdigest()[:12]


def _iso(site_timestamp: float) -> str:
    return dt.datetime.fromtimestamp(
        site_timestamp, tz=dt.timezone.utc
    ).strftime("%Y-%m-%dT%H:%M:%SZ")


def execute_run(
    cfg: ScenarioConfig, scenario_bytes: bytes, out_dir: str | Path
) -> dict:
    """Run the scenario and persist logs, frames, and manifest.

    Returns the manifest dict.
    """
    out = Path(out_dir)
    frames_dir = out / "frames"
    out.mkdir(parents=True, exist_ok=True)
    frame_files: list[str] = []

    def sink(tick: int, img) -> None:
        frames_dir.mkdir(exist_ok=True)
        rel = f"frames/vision_{tick:05d}.ppm"
        write_ppm(out / rel, img)
        frame_files.append(rel)

    vision_log, scada_log = run_scenario(cfg, frame_sink=sink)
    series = compare_runs(vision_log, scada_log)

    (out / "vision_log.csv").write_text(vision_log.to_csv())
    (out / "scada_log.csv").write_text(scada_log.to_csv())
    (out / "error_series.csv").write_text(series.to_csv())

    manifest = build_manifest(cfg, scenario_bytes, vision_log, series, frame_files)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def build_manifest(
    cfg: ScenarioConfig,
    scenario_bytes: bytes,
    vision_log: RunLog,
    series: ErrorSeries,
    frame_files: list[str],
) -> dict:
    def clean(x):
        if isinstance(x, float) and math.isnan(x):
            return None
        return round(x, 6) if isinstance(x, float) else x

    converged_tick = None
    for i, r in enumerate(vision_log.records):
        if r.mode == "target_track" and r.error_px is not None:
            if max(abs(r.error_px[0]), abs(r.error_px[1])) <= 1.0:
                converged_tick = i
                break

    ss_max = series.steady_state_max_mrad
    ss_mean = series.steady_state_mean_mrad
    mu, mv = cfg.camera.mrad_per_px
    return {
        "run_id": run_id_for(scenario_bytes, cfg.seed),
        "scenario_name": cfg.name,
        "scenario_sha256": hashlib.sha256(scenario_bytes).hexdigest(),
        "seed": cfg.seed,
        "tick_s": cfg.tick_s,
        "duration_s": cfg.duration_s,
        "ticks": len(vision_log.records),
        "sim_start_utc": _iso(cfg.site.timestamp),
        "sim_end_utc": _iso(cfg.site.timestamp + cfg.duration_s),
        "camera": {
            "width_px": cfg.camera.width_px,
            "height_px": cfg.camera.height_px,
            "sensor_w_mm": cfg.camera.sensor_w_mm,
            "sensor_h_mm": cfg.camera.sensor_h_mm,
            "focal_mm": cfg.camera.focal_mm,
            "mrad_per_px": [clean(mu), clean(mv)],
        },
        "artifacts": {
            "vision_log": "vision_log.csv",
            "scada_log": "scada_log.csv",
            "error_series": "error_series.csv",
            "frames": frame_files,
        },
        "summary": {
            "steady_state_max_diff_mrad": [clean(ss_max[0]), clean(ss_max[1])],
            "steady_state_mean_diff_mrad": [clean(ss_mean[0]), clean(ss_mean[1])],
            "max_abs_diff_mrad": clean(series.max_abs_diff_mrad),
            "spike_times_s": [clean(t) for t in series.spike_times()],
            "spikes_confined_to_transitions": series.spikes_confined_to_transitions(),
            "converged_tick": converged_tick,
        },
    }


def load_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"{run_dir}: missing {MANIFEST_NAME}")
    return json.loads(path.read_text())


def load_run_log(run_dir: str | Path, which: str = "vision") -> RunLog:
    manifest = load_manifest(run_dir)
    rel = manifest["artifacts"][f"{which}_log"]
    return RunLog.from_csv((Path(run_dir) / rel).read_text(), loop=which)
