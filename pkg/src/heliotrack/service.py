"""Live simulator service for the operator console.

One stepping thread owns all heliostat state and advances the field at
tick_s / accel wall seconds per tick. Requests read immutable per-tick
snapshots; commands go through a queue and take effect at the next tick
boundary, so two identical commands are idempotent.

Endpoints:
  GET  /api/field                      field layout, camera constants
  GET  /api/heliostats/{id}            latest snapshot for one unit
  POST /api/heliostats/{id}/command    {"mode": ..., "azimuth_deg"?, ...}
  GET  /api/frames/{id}?format=png|ppm latest camera frame
  GET  /api/events                     server-sent per-tick telemetry
"""

from __future__ import annotations

import io
import json
import math
import queue
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .control import control_step, scada_setpoint, tracking_error_from_px
from .ephemeris import sun_direction
from .fieldsim import (
    MODES,
    ScenarioConfig,
    _resolve_manual,
    ideal_aim_azel,
    optical_axis,
    step,
)
from .geometry import direction_to_azel
from .render import Scene, render
from .scenario import load_scenario
from .vision import ClassicalDetector, analyze_frame, best_detection, ppm_bytes, track_clouds

EVENT_QUEUE_SIZE = 256


@dataclass
class Command:
    mode: str
    azimuth_deg: float | None = None
    elevation_deg: float | None = None


class HeliostatUnit:
    """State of one tracked heliostat inside the service."""

    def __init__(
        self, unit_id: str, index: int, cfg: ScenarioConfig, scene: Scene, mode: str
    ):
        self.id = unit_id
        self.cfg = cfg
        self.scene = scene
        self.detector = ClassicalDetector()
        ideal = ideal_aim_azel_for(cfg, scene, 0.0)
        start = ideal if ideal else (cfg.stow_azimuth_deg, cfg.stow_elevation_deg)
        self.state = replace(
            cfg.heliostat,
            position=scene.tracker_position,
            azimuth_deg=start[0],
            elevation_deg=start[1],
            mode=mode,
        )
        self.mode = mode
        self.manual_hold: tuple[float, float] | None = None
        self.cloud_tracks: list = []
        self.rng = np.random.default_rng((cfg.seed, 1000 + index))
        self.frame_tick = -1
        self.frame_img: np.ndarray | None = None
        self.snapshot: dict = {}


def ideal_aim_azel_for(cfg: ScenarioConfig, scene: Scene, t_s: float):
    sun = sun_direction(cfg.site.shifted(t_s))
    if not sun.above_horizon:
        return None
    from .geometry import bisector, normalize

    to_target = normalize(
        np.asarray(scene.target_position) - np.asarray(scene.tracker_position)
    )
    return direction_to_azel(bisector(sun.direction, to_target))


class FieldSimulator:
    """Owns every unit and advances them on a wall-clock schedule."""

    def __init__(self, cfg: ScenarioConfig, n_heliostats: int = 3, accel: float = 10.0):
        self.cfg = cfg
        self.accel = max(accel, 1e-3)
        self.tick = 0
        self.units: dict[str, HeliostatUnit] = {}
        self.commands: queue.Queue[tuple[str, Command]] = queue.Queue()
        self.subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        for i in range(n_heliostats):
            unit_id = f"h{i + 1}"
            offset = np.array([14.0 * i, 6.0 * i, 0.0])
            scene = replace(
                cfg.scene,
                tracker_position=tuple(
                    np.asarray(cfg.scene.tracker_position) + offset
                ),
            )
            mode = "target_track" if i == 0 else ("sun_track" if i == 1 else "stow")
            self.units[unit_id] = HeliostatUnit(unit_id, i, cfg, scene, mode)

    # ── lifecycle ────────────────────────────────────────────────────────

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def _run(self) -> None:
        period = self.cfg.tick_s / self.accel
        while not self._stop.is_set():
            began = time.monotonic()
            self.advance_tick()
            elapsed = time.monotonic() - began
            self._stop.wait(max(0.0, period - elapsed))

    # ── stepping ─────────────────────────────────────────────────────────

    def advance_tick(self) -> None:
        t = self.tick * self.cfg.tick_s
        while True:
            try:
                unit_id, cmd = self.commands.get_nowait()
            except queue.Empty:
                break
            unit = self.units.get(unit_id)
            if unit is not None:
                self._apply_command(unit, cmd, t)

        event_units = {}
        for unit in self.units.values():
            snapshot = self._tick_unit(unit, t)
            event_units[unit.id] = snapshot
        self.tick += 1
        event = {"tick": self.tick - 1, "time_s": t, "heliostats": event_units}
        payload = json.dumps(event)
        with self._lock:
            for sub in list(self.subscribers):
                try:
                    sub.put_nowait(payload)
                except queue.Full:
                    self.subscribers.remove(sub)

    def _apply_command(self, unit: HeliostatUnit, cmd: Command, t_s: float) -> None:
        unit.mode = cmd.mode
        unit.manual_hold = None
        if cmd.mode == "manual":
            ideal = ideal_aim_azel_for(self.cfg, unit.scene, t_s)
            if cmd.azimuth_deg is not None and cmd.elevation_deg is not None:
                unit.manual_hold = (
                    cmd.azimuth_deg % 360.0,
                    min(90.0, max(0.0, cmd.elevation_deg)),
                )
            elif ideal is not None:
                unit.manual_hold = ideal
            else:
                unit.manual_hold = (
                    self.cfg.stow_azimuth_deg,
                    self.cfg.stow_elevation_deg,
                )

    def _tick_unit(self, unit: HeliostatUnit, t: float) -> dict:
        cfg = self.cfg
        cam = cfg.camera
        sun = sun_direction(cfg.site.shifted(t))
        mode = unit.mode

        axis = optical_axis(unit.state, unit.rng)
        img, _ = render(unit.scene, cam, axis, t)
        unit.frame_tick = self.tick
        unit.frame_img = img
        dets = unit.detector.detect(img)
        sun_det = best_detection(dets, "sun")
        unit.cloud_tracks = track_clouds(
            unit.cloud_tracks, dets, cfg.tick_s,
            sun_det.bbox if sun_det else None,
        )
        fa = analyze_frame(dets, cam, cfg.calibration_px, tuple(unit.cloud_tracks))

        delta = (0.0, 0.0)
        if mode == "target_track" and fa.tracking_error_px is not None:
            err = tracking_error_from_px(cam, fa.tracking_error_px, t)
            delta = control_step(cfg.controller, cam, err)

        if mode == "stow" or (mode != "manual" and not sun.above_horizon):
            cmd_pose = (cfg.stow_azimuth_deg, cfg.stow_elevation_deg)
        elif mode == "sun_track":
            cmd_pose = (sun.azimuth_deg, sun.elevation_deg)
        elif mode == "manual":
            cmd_pose = unit.manual_hold or (
                cfg.stow_azimuth_deg, cfg.stow_elevation_deg,
            )
        else:
            du, dv = delta
            el = unit.state.elevation_deg
            cos_el = max(math.cos(math.radians(el)), 1e-9)
            cmd_pose = (
                (unit.state.azimuth_deg - math.degrees(du * 1e-3) / cos_el) % 360.0,
                min(90.0, max(0.0, el + math.degrees(dv * 1e-3))),
            )

        ttos = [
            tr.time_to_occlusion
            for tr in unit.cloud_tracks
            if tr.time_to_occlusion is not None
        ]
        snapshot = {
            "id": unit.id,
            "tick": self.tick,
            "time_s": t,
            "mode": mode,
            "azimuth_deg": round(unit.state.azimuth_deg, 6),
            "elevation_deg": round(unit.state.elevation_deg, 6),
            "error_px": _pair(fa.tracking_error_px),
            "error_mrad": _pair(fa.tracking_error_mrad),
            "sun_px": _pair(fa.sun_center),
            "target_px": _pair(fa.target_center),
            "aim_px": _pair(fa.aim_point),
            "shadow": fa.shadow,
            "blocked": fa.blocked,
            "cloud_tto_s": min(ttos) if ttos else None,
            "detections": [
                {"class": d.label, "bbox": list(d.bbox), "score": round(d.score, 4)}
                for d in dets
            ],
            "frame_tick": unit.frame_tick,
        }
        unit.snapshot = snapshot
        unit.state = replace(
            step(unit.state, cmd_pose, cfg.tick_s), mode=mode
        )
        return snapshot

    # ── read side ────────────────────────────────────────────────────────

    def field_summary(self) -> dict:
        cam = self.cfg.camera
        mu, mv = cam.mrad_per_px
        return {
            "tick": self.tick,
            "tick_s": self.cfg.tick_s,
            "accel": self.accel,
            "site": {
                "latitude_deg": self.cfg.site.latitude_deg,
                "longitude_deg": self.cfg.site.longitude_deg,
            },
            "camera": {
                "width_px": cam.width_px,
                "height_px": cam.height_px,
                "mrad_per_px": [mu, mv],
                "principal_point": list(cam.principal_point),
            },
            "target_position_m": list(self.cfg.scene.target_position),
            "heliostats": [
                {
                    "id": u.id,
                    "position_m": list(u.scene.tracker_position),
                    "mode": u.mode,
                    "azimuth_deg": round(u.state.azimuth_deg, 6),
                    "elevation_deg": round(u.state.elevation_deg, 6),
                }
                for u in self.units.values()
            ],
        }

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=EVENT_QUEUE_SIZE)
        with self._lock:
            self.subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self.subscribers:
                self.subscribers.remove(q)


def create_app(
    scenario: str = "cloud_transit",
    accel: float = 10.0,
    n_heliostats: int = 3,
    console_dir: str | Path | None = None,
) -> FastAPI:
    from contextlib import asynccontextmanager

    cfg, _raw = load_scenario(scenario)
    sim = FieldSimulator(cfg, n_heliostats=n_heliostats, accel=accel)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        sim.start()
        try:
            yield
        finally:
            sim.stop()

    app = FastAPI(title="heliotrack service", lifespan=lifespan)
    app.state.sim = sim

    @app.get("/api/field")
    def field():
        return sim.field_summary()

    @app.get("/api/heliostats/{unit_id}")
    def heliostat(unit_id: str):
        unit = sim.units.get(unit_id)
        if unit is None:
            return JSONResponse({"error": "unknown heliostat"}, status_code=404)
        return unit.snapshot or {"id": unit_id, "tick": None}

    @app.post("/api/heliostats/{unit_id}/command")
    async def command(unit_id: str, request: Request):
        unit = sim.units.get(unit_id)
        if unit is None:
            return JSONResponse({"error": "unknown heliostat"}, status_code=404)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "invalid JSON"}, status_code=422)
        mode = body.get("mode")
        if mode not in MODES:
            return JSONResponse(
                {"error": f"mode must be one of {MODES}"}, status_code=422
            )
        az = body.get("azimuth_deg")
        el = body.get("elevation_deg")
        if mode == "manual" and (az is None) != (el is None):
            return JSONResponse(
                {"error": "manual needs both azimuth_deg and elevation_deg"},
                status_code=422,
            )
        for key, val in (("azimuth_deg", az), ("elevation_deg", el)):
            if val is not None and not isinstance(val, (int, float)):
                return JSONResponse(
                    {"error": f"{key} must be a number"}, status_code=422
                )
        if el is not None and not (0.0 <= float(el) <= 90.0):
            return JSONResponse(
                {"error": "elevation_deg outside [0, 90]"}, status_code=422
            )
        if unit.mode == "stow" and mode == "manual":
            return JSONResponse(
                {"error": "stow interlock: leave stow via sun_track or "
                          "target_track before manual pointing"},
                status_code=409,
            )
        sim.commands.put(
            (unit_id, Command(mode, None if az is None else float(az),
                              None if el is None else float(el)))
        )
        return {"accepted": True, "tick": sim.tick, "mode": mode}

    @app.get("/api/frames/{unit_id}")
    def frame(unit_id: str, format: str = "png"):
        unit = sim.units.get(unit_id)
        if unit is None:
            return JSONResponse({"error": "unknown heliostat"}, status_code=404)
        if unit.frame_img is None:
            return JSONResponse({"error": "no frame yet"}, status_code=404)
        headers = {"X-Tick": str(unit.frame_tick), "Cache-Control": "no-store"}
        if format == "ppm":
            return Response(
                ppm_bytes(unit.frame_img),
                media_type="image/x-portable-pixmap",
                headers=headers,
            )
        from PIL import Image as PILImage

        buf = io.BytesIO()
        PILImage.fromarray(unit.frame_img, "RGB").save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png", headers=headers)

    @app.get("/api/events")
    def events(limit: int = 0):
        q = sim.subscribe()

        def stream():
            sent = 0
            idle = 0.0
            try:
                yield ": connected\n\n"
                while limit <= 0 or sent < limit:
                    try:
                        payload = q.get(timeout=0.5)
                    except queue.Empty:
                        idle += 0.5
                        if idle >= 10.0:
                            idle = 0.0
                            yield ": keepalive\n\n"
                        continue
                    idle = 0.0
                    sent += 1
                    yield f"data: {payload}\n\n"
            finally:
                sim.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    console = Path(console_dir) if console_dir else _default_console_dir()
    if console is not None and console.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console, html=True), name="console")
    return app


def _default_console_dir() -> Path | None:
    for candidate in (
        Path(__file__).resolve().parents[2] / "frontend" / "public",
        Path.cwd() / "frontend" / "public",
    ):
        if candidate.exists():
            return candidate
    return None


def _pair(value):
    if value is None:
        return None
    return [float(value[0]), float(value[1])]


def serve(scenario, host, port, accel, n_heliostats) -> None:
    import uvicorn

    app = create_app(scenario, accel=accel, n_heliostats=n_heliostats)
    uvicorn.run(app, host=host, port=port, log_level="warning")
