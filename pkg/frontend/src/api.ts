// Wire types of the tracking service; the console renders these
// verbatim and never re-derives physics client-side.

export interface Detection {
  class: string;
  bbox: [number, number, number, number]; // x, y, w, h in frame pixels
  score: number;
}

export interface Snapshot {
  id: string;
  tick: number;
  time_s: number;
  mode: string;
  azimuth_deg: number;
  elevation_deg: number;
  error_px: [number, number] | null;
  error_mrad: [number, number] | null;
  sun_px: [number, number] | null;
  target_px: [number, number] | null;
  aim_px: [number, number] | null;
  shadow: boolean;
  blocked: boolean;
  cloud_tto_s: number | null;
  detections: Detection[];
  frame_tick: number;
}

export interface TickEvent {
  tick: number;
  time_s: number;
  heliostats: Record<string, Snapshot>;
}

export interface FieldInfo {
  tick: number;
  tick_s: number;
  accel: number;
  site: { latitude_deg: number; longitude_deg: number };
  camera: {
    width_px: number;
    height_px: number;
    mrad_per_px: [number, number];
    principal_point: [number, number];
  };
  target_position_m: number[];
  heliostats: {
    id: string;
    position_m: number[];
    mode: string;
    azimuth_deg: number;
    elevation_deg: number;
  }[];
}

export interface CommandBody {
  mode: string;
  azimuth_deg?: number;
  elevation_deg?: number;
}

export interface CommandResult {
  ok: boolean;
  status: number;
  error?: string;
}

export async function fetchField(base: string): Promise<FieldInfo> {
  const res = await fetch(`${base}/api/field`);
  if (!res.ok) throw new Error(`field request failed: ${res.status}`);
  return res.json();
}

export async function postCommand(
  base: string,
  id: string,
  body: CommandBody,
): Promise<CommandResult> {
  const res = await fetch(`${base}/api/heliostats/${id}/command`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (res.ok) return { ok: true, status: res.status };
  let error = `HTTP ${res.status}`;
  try {
    const payload = await res.json();
    if (payload && payload.error) error = payload.error;
  } catch {
    // keep the status text
  }
  return { ok: false, status: res.status, error };
}

export function frameUrl(base: string, id: string, tick: number): string {
  return `${base}/api/frames/${id}?format=png&t=${tick}`;
}
