#!/usr/bin/env python3
"""Regenerate the console test fixtures from a real scenario run.

Produces, under tests/fixtures/:
  events.jsonl     one service-shaped tick event per line (h1 only)
  vision_log.csv   the same run's CSV export
  detections.json  detector output for a handful of rendered frames

Deterministic: target_track, seed 7.
"""

import json
import warnings
from pathlib import Path

warnings.simplefilter("ignore")

from heliotrack.fieldsim import run_scenario
from heliotrack.scenario import load_scenario
from heliotrack.vision import detect

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    cfg, _raw = load_scenario("target_track")

    frame_dets: dict[int, list] = {}

    def sink(tick: int, img) -> None:
        if len(frame_dets) < 5:
            frame_dets[tick] = [
                {"class": d.label, "bbox": list(d.bbox), "score": round(d.score, 4)}
                for d in detect(img)
            ]

    vision_log, _scada_log = run_scenario(cfg, frame_sink=sink)
    (FIXTURES / "vision_log.csv").write_text(vision_log.to_csv())

    with (FIXTURES / "events.jsonl").open("w") as fh:
        for k, r in enumerate(vision_log.records):
            snapshot = {
                "id": "h1",
                "tick": k,
                "time_s": r.time_s,
                "mode": r.mode,
                "azimuth_deg": r.azimuth_deg,
                "elevation_deg": r.elevation_deg,
                "error_px": list(r.error_px) if r.error_px else None,
                "error_mrad": None,
                "sun_px": list(r.sun_px) if r.sun_px else None,
                "target_px": list(r.target_px) if r.target_px else None,
                "aim_px": list(r.aim_px) if r.aim_px else None,
                "shadow": r.shadow,
                "blocked": r.blocked,
                "cloud_tto_s": r.cloud_tto_s,
                "detections": [],
                "frame_tick": k,
            }
            fh.write(
                json.dumps(
                    {"tick": k, "time_s": r.time_s, "heliostats": {"h1": snapshot}}
                )
                + "\n"
            )

    (FIXTURES / "detections.json").write_text(
        json.dumps(frame_dets, indent=1, sort_keys=True) + "\n"
    )
    print(f"wrote fixtures for {len(vision_log.records)} ticks to {FIXTURES}")


if __name__ == "__main__":
    main()
