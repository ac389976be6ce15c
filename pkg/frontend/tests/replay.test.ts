// Replay a real 200-tick run through the console pipeline and check
// the charted values against the run's CSV export, and the overlay
// rectangles against the detector's reported boxes.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import type { TickEvent } from "../src/api.js";
import { overlayRects } from "../src/overlay.js";
import { ErrorSeries, parseCsvColumns } from "../src/series.js";
import { applyTick, initialState } from "../src/vm.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

function loadEvents(): TickEvent[] {
  const text = readFileSync(join(FIXTURES, "events.jsonl"), "utf-8");
  return text
    .split("\n")
    .filter((ln) => ln.trim().length > 0)
    .map((ln) => JSON.parse(ln) as TickEvent);
}

describe("200-tick session replay", () => {
  it("charts exactly the CSV-exported error for every tick", () => {
    const events = loadEvents();
    expect(events.length).toBe(200);

    const state = initialState();
    const series = new ErrorSeries(events.length);
    let wall = 0;
    for (const event of events) {
      if (applyTick(state, event, (wall += 100))) {
        const snap = state.units.get("h1")!.snapshot;
        series.append(snap.tick, snap.error_px);
      }
    }

    const csv = parseCsvColumns(
      readFileSync(join(FIXTURES, "vision_log.csv"), "utf-8"),
      ["err_px_u", "err_px_v"],
    );
    expect(csv.err_px_u.length).toBe(events.length);

    const byTick = new Map(series.values().map((p) => [p.tick, p]));
    let compared = 0;
    csv.err_px_u.forEach((u, tick) => {
      const v = csv.err_px_v[tick];
      const point = byTick.get(tick);
      if (u === null || v === null) {
        // no error that tick (sun or target missing): nothing charted
        expect(point).toBeUndefined();
        return;
      }
      expect(point, `tick ${tick} missing from chart`).toBeDefined();
      // CSV rounds to 1e-6 px; the chart keeps the full event value
      expect(Math.abs(point!.u - u)).toBeLessThanOrEqual(5e-7);
      expect(Math.abs(point!.v - v)).toBeLessThanOrEqual(5e-7);
      compared += 1;
    });
    expect(compared).toBeGreaterThan(150);
  });

  it("draws overlay boxes at the detector's exact pixel bboxes", () => {
    const detections = JSON.parse(
      readFileSync(join(FIXTURES, "detections.json"), "utf-8"),
    ) as Record<string, { class: string; bbox: [number, number, number, number]; score: number }[]>;
    let boxes = 0;
    for (const dets of Object.values(detections)) {
      const rects = overlayRects(dets, 1.0);
      rects.forEach((r, i) => {
        expect([r.x, r.y, r.w, r.h]).toEqual(dets[i].bbox);
        boxes += 1;
      });
    }
    expect(boxes).toBeGreaterThan(5);
  });
});
