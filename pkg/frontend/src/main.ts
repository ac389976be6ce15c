// DOM wiring: one card per heliostat, fed by the event stream. The
// console is a thin view: no client-side simulation, every number is
// service telemetry (mrad shown as px times the reported camera scale).

import {
  fetchField,
  frameUrl,
  postCommand,
  type FieldInfo,
  type Snapshot,
  type TickEvent,
} from "./api.js";
import { drawStripChart } from "./chart.js";
import { drawOverlay } from "./overlay.js";
import { ErrorSeries } from "./series.js";
import {
  applyTick,
  backoffDelayMs,
  initialState,
  isStale,
  markCommandError,
  markPending,
  pxToMrad,
  type ConsoleState,
} from "./vm.js";

const BASE = "";
const FRAME_SCALE = 0.5;

const state: ConsoleState = initialState();
const series = new Map<string, ErrorSeries>();
const cards = new Map<string, Card>();
let field: FieldInfo | null = null;

interface Card {
  root: HTMLElement;
  frame: HTMLCanvasElement;
  chart: HTMLCanvasElement;
  modeBadge: HTMLElement;
  staleBadge: HTMLElement;
  pose: HTMLElement;
  error: HTMLElement;
  flags: HTMLElement;
  tto: HTMLElement;
  cmdError: HTMLElement;
  img: HTMLImageElement;
  lastFrameTick: number;
}

function el(tag: string, cls: string, parent: HTMLElement): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  parent.appendChild(node);
  return node;
}

function buildCard(id: string, parent: HTMLElement): Card {
  const root = el("section", "card", parent);
  const head = el("header", "card-head", root);
  el("h2", "", head).textContent = id;
  const modeBadge = el("span", "badge mode", head);
  const staleBadge = el("span", "badge stale hidden", head);
  staleBadge.textContent = "STALE";

  const frameWrap = el("div", "frame-wrap", root);
  const frame = el("canvas", "frame", frameWrap) as HTMLCanvasElement;
  const cam = field!.camera;
  frame.width = cam.width_px * FRAME_SCALE;
  frame.height = cam.height_px * FRAME_SCALE;

  const info = el("div", "info", root);
  const pose = el("div", "pose", info);
  const error = el("div", "error", info);
  const flags = el("div", "flags", info);
  const tto = el("div", "tto", info);

  const chart = el("canvas", "chart", root) as HTMLCanvasElement;
  chart.width = 400;
  chart.height = 110;

  const controls = el("div", "controls", root);
  for (const mode of ["target_track", "sun_track", "stow"]) {
    const btn = el("button", "cmd", controls) as HTMLButtonElement;
    btn.textContent = mode.replace("_", " ");
    btn.onclick = () => sendMode(id, mode);
  }
  for (const [label, dAz, dEl] of [
    ["az-", -0.5, 0],
    ["az+", 0.5, 0],
    ["el-", 0, -0.5],
    ["el+", 0, 0.5],
  ] as const) {
    const btn = el("button", "cmd nudge", controls) as HTMLButtonElement;
    btn.textContent = label;
    btn.onclick = () => sendNudge(id, dAz, dEl);
  }
  const cmdError = el("div", "cmd-error", root);

  const img = new Image();
  img.onload = () => {
    const ctx = frame.getContext("2d")!;
    ctx.drawImage(img, 0, 0, frame.width, frame.height);
    const unit = state.units.get(id);
    if (unit) drawOverlay(ctx, unit.snapshot, FRAME_SCALE);
  };
  return {
    root, frame, chart, modeBadge, staleBadge, pose, error, flags, tto,
    cmdError, img, lastFrameTick: -1,
  };
}

async function sendMode(id: string, mode: string): Promise<void> {
  markPending(state, id, mode);
  renderUnit(id);
  const res = await postCommand(BASE, id, { mode });
  if (!res.ok) {
    markCommandError(state, id, `${res.status}: ${res.error}`);
    renderUnit(id);
  }
}

async function sendNudge(id: string, dAz: number, dEl: number): Promise<void> {
  const unit = state.units.get(id);
  if (!unit) return;
  const s = unit.snapshot;
  markPending(state, id, "manual");
  renderUnit(id);
  const res = await postCommand(BASE, id, {
    mode: "manual",
    azimuth_deg: s.azimuth_deg + dAz,
    elevation_deg: Math.min(90, Math.max(0, s.elevation_deg + dEl)),
  });
  if (!res.ok) {
    markCommandError(state, id, `${res.status}: ${res.error}`);
    renderUnit(id);
  }
}

function renderUnit(id: string): void {
  const unit = state.units.get(id);
  const card = cards.get(id);
  if (!unit || !card || !field) return;
  const s: Snapshot = unit.snapshot;
  card.modeBadge.textContent = unit.pending
    ? `${s.mode} -> ${unit.pending.mode}...`
    : s.mode;
  card.modeBadge.classList.toggle("pending", unit.pending !== null);
  card.pose.textContent =
    `az ${s.azimuth_deg.toFixed(3)} deg   el ${s.elevation_deg.toFixed(3)} deg`;
  if (s.error_px) {
    const [mu, mv] = pxToMrad(s.error_px, field.camera.mrad_per_px);
    card.error.textContent =
      `error (${s.error_px[0].toFixed(2)}, ${s.error_px[1].toFixed(2)}) px  ` +
      `= (${mu.toFixed(2)}, ${mv.toFixed(2)}) mrad`;
  } else {
    card.error.textContent = "error: n/a (sun or target not visible)";
  }
  card.flags.innerHTML = "";
  if (s.shadow) el("span", "badge warn", card.flags).textContent = "SHADOW";
  if (s.blocked) el("span", "badge warn", card.flags).textContent = "BLOCK";
  if (s.cloud_tto_s !== null && s.cloud_tto_s <= 90) {
    card.tto.textContent = `cloud occludes sun in ~${s.cloud_tto_s.toFixed(0)} s`;
    card.tto.classList.add("warn");
  } else {
    card.tto.textContent = "";
    card.tto.classList.remove("warn");
  }
  card.cmdError.textContent = unit.commandError ?? "";

  const errSeries = series.get(id)!;
  errSeries.append(s.tick, s.error_px);
  drawStripChart(
    card.chart.getContext("2d")!,
    card.chart.width,
    card.chart.height,
    errSeries,
    field.camera.mrad_per_px,
  );

  if (s.frame_tick !== card.lastFrameTick) {
    card.lastFrameTick = s.frame_tick;
    card.img.src = frameUrl(BASE, id, s.frame_tick);
  }
}

function renderBanner(): void {
  const banner = document.getElementById("banner")!;
  const stale = isStale(state, Date.now());
  const conn = state.connection;
  banner.classList.toggle("bad", stale || conn.kind !== "open");
  if (conn.kind === "open" && !stale) {
    banner.textContent = `live - tick ${state.lastTick ?? "-"}`;
  } else if (conn.kind === "reconnecting") {
    banner.textContent =
      `connection lost - retry ${conn.attempt} in ${(conn.delayMs / 1000).toFixed(0)} s`;
  } else if (stale && conn.kind === "open") {
    banner.textContent = "no telemetry for >2 s - data may be stale";
  } else {
    banner.textContent = "connecting...";
  }
  for (const [id, card] of cards) {
    card.staleBadge.classList.toggle("hidden", !stale);
    void id;
  }
}

function connect(attempt: number): void {
  state.connection = attempt === 0
    ? { kind: "connecting" }
    : { kind: "reconnecting", attempt, delayMs: backoffDelayMs(attempt) };
  renderBanner();
  const source = new EventSource(`${BASE}/api/events`);
  source.onopen = () => {
    state.connection = { kind: "open" };
    renderBanner();
  };
  source.onmessage = (msg) => {
    const event: TickEvent = JSON.parse(msg.data);
    if (applyTick(state, event, Date.now())) {
      for (const id of Object.keys(event.heliostats)) {
        if (!cards.has(id) && field) {
          series.set(id, new ErrorSeries());
          cards.set(id, buildCard(id, document.getElementById("field")!));
        }
        renderUnit(id);
      }
      renderBanner();
    }
  };
  source.onerror = () => {
    source.close();
    const next = attempt + 1;
    const delay = backoffDelayMs(next);
    state.connection = { kind: "reconnecting", attempt: next, delayMs: delay };
    renderBanner();
    setTimeout(() => connect(next), delay);
  };
}

async function start(): Promise<void> {
  field = await fetchField(BASE);
  const header = document.getElementById("site")!;
  header.textContent =
    `site ${field.site.latitude_deg.toFixed(2)}, ` +
    `${field.site.longitude_deg.toFixed(2)} - camera ` +
    `${field.camera.width_px}x${field.camera.height_px} - ` +
    `${field.camera.mrad_per_px[0].toFixed(3)} mrad/px - ` +
    `${field.accel}x time`;
  for (const h of field.heliostats) {
    series.set(h.id, new ErrorSeries());
    cards.set(h.id, buildCard(h.id, document.getElementById("field")!));
  }
  setInterval(renderBanner, 500);
  connect(0);
}

start().catch((err) => {
  document.getElementById("banner")!.textContent = `failed to start: ${err}`;
  document.getElementById("banner")!.classList.add("bad");
});
