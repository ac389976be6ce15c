// Strip chart for the tracking error, pixel units on the left edge,
// mrad equivalents (service camera constants) on the right.

import type { ErrorSeries } from "./series.js";

export function drawStripChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  series: ErrorSeries,
  mradPerPx: [number, number],
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, width, height);

  const points = series.values();
  const { min, max } = series.extent();
  const pad = 0.1 * (max - min) || 1;
  const lo = min - pad;
  const hi = max + pad;
  const toY = (value: number) => height - ((value - lo) / (hi - lo)) * height;

  ctx.strokeStyle = "#2a3038";
  ctx.beginPath();
  ctx.moveTo(0, toY(0));
  ctx.lineTo(width, toY(0));
  ctx.stroke();

  if (points.length >= 2) {
    const t0 = points[0].tick;
    const t1 = points[points.length - 1].tick;
    const toX = (tick: number) => ((tick - t0) / Math.max(1, t1 - t0)) * width;
    for (const [key, color] of [
      ["u", "#4cc38a"],
      ["v", "#3e63dd"],
    ] as const) {
      ctx.strokeStyle = color;
      ctx.beginPath();
      points.forEach((p, i) => {
        const x = toX(p.tick);
        const y = toY(p[key]);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
  }

  ctx.fillStyle = "#9aa4b2";
  ctx.font = "10px ui-monospace, monospace";
  ctx.fillText(`${hi.toFixed(1)} px / ${(hi * mradPerPx[0]).toFixed(1)} mrad`, 4, 10);
  ctx.fillText(`${lo.toFixed(1)} px`, 4, height - 3);
}
