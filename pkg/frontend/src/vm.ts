// View-model state: one source of truth fed by the event stream.
// Every displayed number comes from the latest applied tick; data is
// marked stale rather than silently frozen.

import type { Snapshot, TickEvent } from "./api.js";

export const STALE_AFTER_MS = 2000;

export type Connection =
  | { kind: "connecting" }
  | { kind: "open" }
  | { kind: "reconnecting"; attempt: number; delayMs: number };

export interface PendingCommand {
  mode: string;
  sentTick: number;
}

export interface UnitVM {
  snapshot: Snapshot;
  pending: PendingCommand | null;
  commandError: string | null;
}

export interface ConsoleState {
  connection: Connection;
  lastEventWallMs: number | null;
  lastTick: number | null;
  units: Map<string, UnitVM>;
}

export function initialState(): ConsoleState {
  return {
    connection: { kind: "connecting" },
    lastEventWallMs: null,
    lastTick: null,
    units: new Map(),
  };
}

/** Apply one tick event; out-of-order ticks are dropped. */
export function applyTick(
  state: ConsoleState,
  event: TickEvent,
  wallMs: number,
): boolean {
  if (state.lastTick !== null && event.tick <= state.lastTick) return false;
  state.lastTick = event.tick;
  state.lastEventWallMs = wallMs;
  for (const [id, snapshot] of Object.entries(event.heliostats)) {
    const unit = state.units.get(id);
    if (unit === undefined) {
      state.units.set(id, { snapshot, pending: null, commandError: null });
      continue;
    }
    unit.snapshot = snapshot;
    if (unit.pending && snapshot.mode === unit.pending.mode) {
      unit.pending = null; // the plant confirmed the mode switch
    }
  }
  return true;
}

export function markPending(state: ConsoleState, id: string, mode: string): void {
  const unit = state.units.get(id);
  if (!unit) return;
  unit.pending = { mode, sentTick: state.lastTick ?? 0 };
  unit.commandError = null;
}

export function markCommandError(
  state: ConsoleState,
  id: string,
  error: string,
): void {
  const unit = state.units.get(id);
  if (!unit) return;
  unit.pending = null;
  unit.commandError = error;
}

export function isStale(state: ConsoleState, nowMs: number): boolean {
  if (state.lastEventWallMs === null) return true;
  return nowMs - state.lastEventWallMs > STALE_AFTER_MS;
}

/** Reconnect delay schedule: doubling from 1 s, capped at 10 s. */
export function backoffDelayMs(attempt: number): number {
  return Math.min(1000 * 2 ** Math.max(0, attempt - 1), 10000);
}

/** px -> mrad using the camera constants the service reported. */
export function pxToMrad(
  errPx: [number, number],
  mradPerPx: [number, number],
): [number, number] {
  return [errPx[0] * mradPerPx[0], errPx[1] * mradPerPx[1]];
}
