/** View state and the sliding-window rectangle interaction logic. */

import type { Quantity } from "./protocol.js";

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface StreamMeta {
  step: number;
  time: number;
  count: number;
  min: number;
  max: number;
  levels: number[];
}

export interface ViewState {
  window: Rect;
  budget: number;
  quantity: Quantity;
  paused: boolean;
  lastMeta: StreamMeta | null;
}

export function initialState(domain: Rect): ViewState {
  return {
    window: { ...domain },
    budget: 400,
    quantity: "velocity_magnitude",
    paused: false,
    lastMeta: null,
  };
}

export function clampRect(r: Rect, domain: Rect, minSize = 1e-6): Rect {
  let x0 = Math.max(domain.x0, Math.min(r.x0, r.x1));
  let x1 = Math.min(domain.x1, Math.max(r.x0, r.x1));
  let y0 = Math.max(domain.y0, Math.min(r.y0, r.y1));
  let y1 = Math.min(domain.y1, Math.max(r.y0, r.y1));
  if (x1 - x0 < minSize) {
    x1 = Math.min(domain.x1, x0 + minSize);
    x0 = Math.max(domain.x0, x1 - minSize);
  }
  if (y1 - y0 < minSize) {
    y1 = Math.min(domain.y1, y0 + minSize);
    y0 = Math.max(domain.y0, y1 - minSize);
  }
  return { x0, y0, x1, y1 };
}

export interface DragMode {
  move: boolean;
  left: boolean;
  right: boolean;
  top: boolean;
  bottom: boolean;
}

/** Classify a pointer position against the window rectangle (world units).
 * Near an edge (within tol) resizes; inside moves; outside starts a fresh
 * rectangle. */
export function hitTest(rect: Rect, x: number, y: number, tol: number): DragMode | null {
  const nearL = Math.abs(x - rect.x0) <= tol;
  const nearR = Math.abs(x - rect.x1) <= tol;
  const nearB = Math.abs(y - rect.y0) <= tol;
  const nearT = Math.abs(y - rect.y1) <= tol;
  const insideX = x >= rect.x0 - tol && x <= rect.x1 + tol;
  const insideY = y >= rect.y0 - tol && y <= rect.y1 + tol;
  if (!insideX || !insideY) {
    return null;
  }
  if (nearL || nearR || nearB || nearT) {
    return { move: false, left: nearL, right: nearR, top: nearT, bottom: nearB };
  }
  if (x > rect.x0 && x < rect.x1 && y > rect.y0 && y < rect.y1) {
    return { move: true, left: false, right: false, top: false, bottom: false };
  }
  return null;
}

export function applyDrag(
  start: Rect, mode: DragMode, dx: number, dy: number, domain: Rect,
): Rect {
  const r = { ...start };
  if (mode.move) {
    const w = start.x1 - start.x0;
    const h = start.y1 - start.y0;
    r.x0 = Math.min(Math.max(start.x0 + dx, domain.x0), domain.x1 - w);
    r.y0 = Math.min(Math.max(start.y0 + dy, domain.y0), domain.y1 - h);
    r.x1 = r.x0 + w;
    r.y1 = r.y0 + h;
    return r;
  }
  if (mode.left) r.x0 = start.x0 + dx;
  if (mode.right) r.x1 = start.x1 + dx;
  if (mode.bottom) r.y0 = start.y0 + dy;
  if (mode.top) r.y1 = start.y1 + dy;
  return clampRect(r, domain);
}
