/** Heatmap rasterisation of a cell stream.
 *
 * Cells are mapped to pixel rectangles whose edges are computed from the
 * shared world edge and rounded once, so adjacent cells land on identical
 * pixel boundaries: no gaps, no double-painted seams, at any mix of levels.
 */

import { CellStream, displayValue } from "./protocol.js";
import type { Rect } from "./state.js";

export interface PixelRect {
  x: number;
  y: number;
  w: number;
  h: number;
  value: number;
  level: number;
}

export interface Viewport {
  width: number;
  height: number;
  world: Rect; // world region shown by the canvas
}

export function worldToPixelX(vp: Viewport, x: number): number {
  return Math.round(((x - vp.world.x0) / (vp.world.x1 - vp.world.x0)) * vp.width);
}

export function worldToPixelY(vp: Viewport, y: number): number {
  // canvas y grows downward
  return Math.round(((vp.world.y1 - y) / (vp.world.y1 - vp.world.y0)) * vp.height);
}

export function cellRects(stream: CellStream, vp: Viewport): PixelRect[] {
  const out: PixelRect[] = [];
  for (let c = 0; c < stream.count; c++) {
    const cx = stream.centers[3 * c];
    const cy = stream.centers[3 * c + 1];
    const wx = stream.widths[3 * c];
    const wy = stream.widths[3 * c + 1];
    const px0 = worldToPixelX(vp, cx - wx / 2);
    const px1 = worldToPixelX(vp, cx + wx / 2);
    const py0 = worldToPixelY(vp, cy + wy / 2);
    const py1 = worldToPixelY(vp, cy - wy / 2);
    out.push({
      x: px0, y: py0, w: px1 - px0, h: py1 - py0,
      value: displayValue(stream, c),
      level: stream.levels[c],
    });
  }
  return out;
}

export function valueRange(rects: PixelRect[]): { min: number; max: number } {
  let min = Infinity;
  let max = -Infinity;
  for (const r of rects) {
    if (r.value < min) min = r.value;
    if (r.value > max) max = r.value;
  }
  if (!rects.length) {
    return { min: 0, max: 0 };
  }
  return { min, max };
}

/** Blue -> cyan -> yellow -> red ramp. */
export function colormap(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  const stops: [number, number, number][] = [
    [13, 8, 135], [126, 3, 168], [204, 71, 120], [248, 149, 64], [240, 249, 33],
  ];
  const pos = x * (stops.length - 1);
  const i = Math.min(stops.length - 2, Math.floor(pos));
  const f = pos - i;
  const a = stops[i];
  const b = stops[i + 1];
  return [
    Math.round(a[0] + f * (b[0] - a[0])),
    Math.round(a[1] + f * (b[1] - a[1])),
    Math.round(a[2] + f * (b[2] - a[2])),
  ];
}

/** Paint counts per pixel; lets tests assert full single coverage. */
export function coverageMask(rects: PixelRect[], width: number, height: number): Uint16Array {
  const mask = new Uint16Array(width * height);
  for (const r of rects) {
    for (let y = r.y; y < r.y + r.h; y++) {
      if (y < 0 || y >= height) continue;
      for (let x = r.x; x < r.x + r.w; x++) {
        if (x < 0 || x >= width) continue;
        mask[y * width + x] += 1;
      }
    }
  }
  return mask;
}

export interface DrawResult {
  min: number;
  max: number;
  count: number;
  minLevel: number;
  maxLevel: number;
}

export function drawStream(
  ctx: CanvasRenderingContext2D, stream: CellStream, vp: Viewport,
): DrawResult {
  const rects = cellRects(stream, vp);
  const { min, max } = valueRange(rects);
  const span = max - min || 1;
  ctx.clearRect(0, 0, vp.width, vp.height);
  let minLevel = 255;
  let maxLevel = 0;
  for (const r of rects) {
    const [cr, cg, cb] = colormap((r.value - min) / span);
    ctx.fillStyle = `rgb(${cr},${cg},${cb})`;
    ctx.fillRect(r.x, r.y, r.w, r.h);
    if (r.level < minLevel) minLevel = r.level;
    if (r.level > maxLevel) maxLevel = r.level;
  }
  return { min, max, count: rects.length, minLevel, maxLevel };
}
