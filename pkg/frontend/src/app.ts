/** Browser steering client: live heatmap, draggable sliding-window
 * rectangle, budget slider and steering controls. */

import { backoffDelays, Connection, QueryScheduler } from "./net.js";
import {
  BBox, CMD, decodeAck, decodeCellStream, decodeError, decodeMetrics,
  encodeMetricsRequest, encodeSteer, encodeVisQuery, Quantity,
} from "./protocol.js";
import { cellRects, colormap, drawStream, Viewport } from "./render.js";
import { applyDrag, clampRect, DragMode, hitTest, initialState, Rect, ViewState } from "./state.js";

interface QueryParams {
  window: Rect;
  budget: number;
  quantity: Quantity;
}

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

class App {
  private conn: Connection;
  private state: ViewState = initialState({ x0: 0, y0: 0, x1: 1, y1: 1 });
  private domain: Rect = { x0: 0, y0: 0, x1: 1, y1: 1 };
  private zlo = 0;
  private zhi = 0.1;
  private scheduler: QueryScheduler<QueryParams>;
  private canvas = $("heatmap") as unknown as HTMLCanvasElement;
  private overlay = $("overlay") as unknown as HTMLCanvasElement;
  private drag: { mode: DragMode; startRect: Rect; x: number; y: number } | null = null;
  private watchTimer: ReturnType<typeof setInterval> | null = null;
  private nextDelay = backoffDelays();

  constructor() {
    const url = `ws://${location.host}/ws`;
    this.conn = new Connection(url);
    this.scheduler = new QueryScheduler((p) => this.runQuery(p), 150);
    this.bindControls();
    void this.start();
  }

  private async start(): Promise<void> {
    this.conn.onstate = (s) => {
      $("status").textContent = s;
      if (s === "closed") {
        setTimeout(() => void this.start(), this.nextDelay());
      }
    };
    try {
      await this.conn.connect();
    } catch {
      return; // onstate(closed) schedules the retry
    }
    this.nextDelay = backoffDelays();
    const m = decodeMetrics(
      (await this.conn.request(encodeMetricsRequest())).payload) as {
      domain: { lo: number[]; hi: number[] };
      paused: boolean;
    };
    this.domain = {
      x0: m.domain.lo[0], y0: m.domain.lo[1],
      x1: m.domain.hi[0], y1: m.domain.hi[1],
    };
    this.zlo = m.domain.lo[2];
    this.zhi = m.domain.hi[2];
    this.state = initialState(this.domain);
    this.state.paused = m.paused;
    this.syncControls();
    this.query();
  }

  private bindControls(): void {
    const budget = $("budget") as unknown as HTMLInputElement;
    budget.oninput = () => {
      this.state.budget = Math.max(1, Math.round(4 ** parseFloat(budget.value)));
      $("budget-label").textContent = String(this.state.budget);
      this.query();
    };
    const quantity = $("quantity") as unknown as HTMLSelectElement;
    quantity.onchange = () => {
      this.state.quantity = quantity.value as Quantity;
      this.query();
    };
    $("reset-window").onclick = () => {
      this.state.window = { ...this.domain };
      this.query();
    };
    $("pause").onclick = () => void this.steer(
      { kind: this.state.paused ? "resume" : "pause" });
    const lid = $("lid") as unknown as HTMLInputElement;
    lid.onchange = () => void this.steer({
      kind: "set_boundary", face: "y+",
      bc: { kind: "moving_wall", velocity: [parseFloat(lid.value), 0, 0] },
    });
    const visc = $("viscosity") as unknown as HTMLInputElement;
    visc.onchange = () => void this.steer(
      { kind: "set_viscosity", value: parseFloat(visc.value) });
    $("refine").onclick = () => void this.steer(
      { kind: "refine", region: this.bbox() });
    $("spawn-sub").onclick = () => void this.steer(
      { kind: "spawn_sub", region: this.bbox(), depth: 1 });
    const watch = $("watch") as unknown as HTMLInputElement;
    watch.onchange = () => this.setWatch(watch.checked);
    this.bindPointer();
  }

  private syncControls(): void {
    ($("budget") as unknown as HTMLInputElement).value =
      String(Math.log(this.state.budget) / Math.log(4));
    $("budget-label").textContent = String(this.state.budget);
    ($("quantity") as unknown as HTMLSelectElement).value = this.state.quantity;
    $("pause").textContent = this.state.paused ? "resume" : "pause";
  }

  private bbox(): { lo: number[]; hi: number[] } {
    const w = clampRect(this.state.window, this.domain);
    return { lo: [w.x0, w.y0, this.zlo], hi: [w.x1, w.y1, this.zhi] };
  }

  private viewport(): Viewport {
    return { width: this.canvas.width, height: this.canvas.height, world: this.domain };
  }

  private query(): void {
    this.scheduler.requestNow({
      window: { ...this.state.window },
      budget: this.state.budget,
      quantity: this.state.quantity,
    });
  }

  private queryDebounced(): void {
    this.scheduler.request({
      window: { ...this.state.window },
      budget: this.state.budget,
      quantity: this.state.quantity,
    });
  }

  private async runQuery(p: QueryParams): Promise<void> {
    if (!this.conn.open) {
      return;
    }
    const w = clampRect(p.window, this.domain);
    const bbox: BBox = {
      lo: [w.x0, w.y0, this.zlo], hi: [w.x1, w.y1, this.zhi],
    };
    const reply = await this.conn.request(
      encodeVisQuery(bbox, p.budget, p.quantity));
    if (reply.command === CMD.ERROR) {
      const { code, message } = decodeError(reply.payload);
      this.banner(`query rejected (${code}): ${message}`);
      return;
    }
    try {
      const stream = await decodeCellStream(reply.payload);
      if (stream.count > p.budget) {
        this.banner("server exceeded the requested budget");
        return;
      }
      const ctx = this.canvas.getContext("2d")!;
      const res = drawStream(ctx, stream, this.viewport());
      const levels = [...new Set(stream.levels)].sort((a, b) => a - b);
      this.state.lastMeta = {
        step: 0, time: stream.time, count: stream.count,
        min: res.min, max: res.max, levels,
      };
      $("meta").textContent =
        `t=${stream.time.toPrecision(6)}  cells=${stream.count}` +
        `  levels=[${levels.join(",")}]  range=[${res.min.toPrecision(3)}` +
        `, ${res.max.toPrecision(3)}]`;
      this.drawLegend(res.min, res.max);
      this.banner("");
    } catch (err) {
      this.banner(`malformed stream: ${(err as Error).message}`);
    }
    this.drawOverlay();
  }

  private async steer(command: Record<string, unknown>): Promise<void> {
    if (!this.conn.open) {
      return;
    }
    const reply = await this.conn.request(encodeSteer(command));
    if (reply.command === CMD.ERROR) {
      const { code, message } = decodeError(reply.payload);
      this.banner(`rejected (${code}): ${message}`);
      return;
    }
    const { appliedStep, assignedId } = decodeAck(reply.payload);
    if (command.kind === "pause" || command.kind === "resume") {
      this.state.paused = command.kind === "pause";
      this.syncControls();
    }
    const extra = assignedId ? ` (id ${assignedId})` : "";
    this.banner(`${command.kind}: applies at step ${appliedStep}${extra}`);
    this.query();
  }

  private setWatch(on: boolean): void {
    if (this.watchTimer !== null) {
      clearInterval(this.watchTimer);
      this.watchTimer = null;
    }
    if (on) {
      const rate = parseFloat(($("rate") as unknown as HTMLInputElement).value) || 2;
      this.watchTimer = setInterval(() => this.query(), 1000 / rate);
    }
  }

  // -- window rectangle interaction --

  private bindPointer(): void {
    const toWorld = (ev: PointerEvent): [number, number] => {
      const r = this.overlay.getBoundingClientRect();
      const fx = (ev.clientX - r.left) / r.width;
      const fy = (ev.clientY - r.top) / r.height;
      return [
        this.domain.x0 + fx * (this.domain.x1 - this.domain.x0),
        this.domain.y1 - fy * (this.domain.y1 - this.domain.y0),
      ];
    };
    this.overlay.onpointerdown = (ev) => {
      const [x, y] = toWorld(ev);
      const tol = 0.02 * (this.domain.x1 - this.domain.x0);
      let mode = hitTest(this.state.window, x, y, tol);
      if (!mode) {
        this.state.window = clampRect(
          { x0: x, y0: y, x1: x, y1: y }, this.domain);
        mode = { move: false, left: false, right: true, top: true, bottom: false };
      }
      this.drag = { mode, startRect: { ...this.state.window }, x, y };
      this.overlay.setPointerCapture(ev.pointerId);
    };
    this.overlay.onpointermove = (ev) => {
      if (!this.drag) {
        return;
      }
      const [x, y] = toWorld(ev);
      this.state.window = applyDrag(
        this.drag.startRect, this.drag.mode,
        x - this.drag.x, y - this.drag.y, this.domain);
      this.drawOverlay();
      this.queryDebounced();
    };
    this.overlay.onpointerup = () => {
      this.drag = null;
      this.queryDebounced();
    };
  }

  private drawOverlay(): void {
    const ctx = this.overlay.getContext("2d")!;
    const vp = this.viewport();
    ctx.clearRect(0, 0, vp.width, vp.height);
    const w = this.state.window;
    const x = Math.round(((w.x0 - this.domain.x0) / (this.domain.x1 - this.domain.x0)) * vp.width);
    const x1 = Math.round(((w.x1 - this.domain.x0) / (this.domain.x1 - this.domain.x0)) * vp.width);
    const y = Math.round(((this.domain.y1 - w.y1) / (this.domain.y1 - this.domain.y0)) * vp.height);
    const y1 = Math.round(((this.domain.y1 - w.y0) / (this.domain.y1 - this.domain.y0)) * vp.height);
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 2;
    ctx.setLineDash([6, 4]);
    ctx.strokeRect(x + 0.5, y + 0.5, x1 - x - 1, y1 - y - 1);
  }

  private drawLegend(min: number, max: number): void {
    const legend = $("legend") as unknown as HTMLCanvasElement;
    const ctx = legend.getContext("2d")!;
    for (let x = 0; x < legend.width; x++) {
      const [r, g, b] = colormap(x / (legend.width - 1));
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(x, 0, 1, legend.height);
    }
    $("legend-min").textContent = min.toPrecision(3);
    $("legend-max").textContent = max.toPrecision(3);
  }

  private banner(text: string): void {
    $("banner").textContent = text;
    $("banner").style.display = text ? "block" : "none";
  }
}

window.addEventListener("load", () => new App());
export { cellRects };
