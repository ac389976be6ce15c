// Detection overlays: rectangles at exactly the service-reported bbox
// pixels, scaled only by the canvas/frame ratio.

import type { Detection, Snapshot } from "./api.js";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
  label: string;
  score: number;
}

export const CLASS_COLORS: Record<string, string> = {
  sun: "#e5484d",
  cloud: "#3e63dd",
  heliostat: "#f5f5f5",
  target: "#1a1a1a",
};

/** Map detection bboxes to canvas rectangles (scale = canvas/frame). */
export function overlayRects(dets: Detection[], scale: number): Rect[] {
  return dets.map((d) => ({
    x: d.bbox[0] * scale,
    y: d.bbox[1] * scale,
    w: d.bbox[2] * scale,
    h: d.bbox[3] * scale,
    label: d.class,
    score: d.score,
  }));
}

export interface Marker {
  x: number;
  y: number;
  kind: "sun" | "target" | "aim";
}

export function overlayMarkers(snapshot: Snapshot, scale: number): Marker[] {
  const out: Marker[] = [];
  const add = (p: [number, number] | null, kind: Marker["kind"]) => {
    if (p !== null) out.push({ x: p[0] * scale, y: p[1] * scale, kind });
  };
  add(snapshot.sun_px, "sun");
  add(snapshot.target_px, "target");
  add(snapshot.aim_px, "aim");
  return out;
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  snapshot: Snapshot,
  scale: number,
): void {
  ctx.lineWidth = 1;
  ctx.font = "10px ui-monospace, monospace";
  for (const r of overlayRects(snapshot.detections, scale)) {
    ctx.strokeStyle = CLASS_COLORS[r.label] ?? "#ffffff";
    ctx.strokeRect(r.x, r.y, r.w, r.h);
    ctx.fillStyle = CLASS_COLORS[r.label] ?? "#ffffff";
    ctx.fillText(`${r.label} ${r.score.toFixed(2)}`, r.x + 2, r.y - 2);
  }
  for (const m of overlayMarkers(snapshot, scale)) {
    ctx.strokeStyle = m.kind === "aim" ? "#ffd60a" : "#ffffff";
    ctx.beginPath();
    if (m.kind === "aim") {
      ctx.arc(m.x, m.y, 5, 0, 2 * Math.PI);
    } else {
      ctx.moveTo(m.x - 5, m.y);
      ctx.lineTo(m.x + 5, m.y);
      ctx.moveTo(m.x, m.y - 5);
      ctx.lineTo(m.x, m.y + 5);
    }
    ctx.stroke();
  }
}
