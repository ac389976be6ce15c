// Fixed-window tracking-error history per heliostat, plus the CSV
// parsing used to cross-check charted values against run exports.

export interface SeriesPoint {
  tick: number;
  u: number;
  v: number;
}

export class ErrorSeries {
  private points: SeriesPoint[] = [];

  constructor(readonly capacity: number = 240) {}

  append(tick: number, errPx: [number, number] | null): void {
    if (errPx === null) return;
    const last = this.points[this.points.length - 1];
    if (last && tick <= last.tick) return;
    this.points.push({ tick, u: errPx[0], v: errPx[1] });
    if (this.points.length > this.capacity) {
      this.points.splice(0, this.points.length - this.capacity);
    }
  }

  values(): SeriesPoint[] {
    return this.points.slice();
  }

  latest(): SeriesPoint | null {
    return this.points[this.points.length - 1] ?? null;
  }

  extent(): { min: number; max: number } {
    let min = -1;
    let max = 1;
    for (const p of this.points) {
      min = Math.min(min, p.u, p.v);
      max = Math.max(max, p.u, p.v);
    }
    return { min, max };
  }
}

/** Parse named columns out of CSV text (header row required). */
export function parseCsvColumns(
  text: string,
  columns: string[],
): Record<string, (number | null)[]> {
  const lines = text.split(/\r?\n/).filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) throw new Error("empty CSV");
  const header = lines[0].split(",");
  const idx = columns.map((c) => {
    const i = header.indexOf(c);
    if (i < 0) throw new Error(`CSV is missing column ${c}`);
    return i;
  });
  const out: Record<string, (number | null)[]> = {};
  for (const c of columns) out[c] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    columns.forEach((c, k) => {
      const raw = cells[idx[k]];
      out[c].push(raw === "" || raw === undefined ? null : Number(raw));
    });
  }
  return out;
}
