/** Connection management: strict request/reply over one WebSocket, a
 * debounced latest-wins query scheduler, and reconnect with backoff. */

import {
  checkHandshake, decodeFrame, Frame, handshakeBytes,
} from "./protocol.js";

type Waiter = { resolve: (f: Frame) => void; reject: (e: Error) => void };

export class Connection {
  private ws: WebSocket | null = null;
  private queue: Waiter[] = [];
  private ready = false;
  onstate: (state: "connecting" | "open" | "closed") => void = () => {};

  constructor(private url: string) {}

  connect(): Promise<void> {
    this.onstate("connecting");
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(this.url);
      ws.binaryType = "arraybuffer";
      ws.onopen = () => ws.send(handshakeBytes() as unknown as ArrayBufferView);
      ws.onmessage = (ev) => {
        const data = new Uint8Array(ev.data as ArrayBuffer);
        if (!this.ready) {
          try {
            checkHandshake(data);
          } catch (err) {
            ws.close();
            reject(err as Error);
            return;
          }
          this.ready = true;
          this.ws = ws;
          this.onstate("open");
          resolve();
          return;
        }
        const waiter = this.queue.shift();
        if (waiter) {
          waiter.resolve(decodeFrame(data));
        }
      };
      ws.onerror = () => {
        if (!this.ready) reject(new Error("connection failed"));
      };
      ws.onclose = () => {
        this.ready = false;
        this.ws = null;
        this.onstate("closed");
        for (const w of this.queue.splice(0)) {
          w.reject(new Error("connection closed"));
        }
      };
    });
  }

  get open(): boolean {
    return this.ready;
  }

  /** Send one frame and await exactly one reply frame. */
  request(frame: Uint8Array): Promise<Frame> {
    if (!this.ws || !this.ready) {
      return Promise.reject(new Error("not connected"));
    }
    return new Promise((resolve, reject) => {
      this.queue.push({ resolve, reject });
      this.ws!.send(frame as unknown as ArrayBufferView);
    });
  }

  close(): void {
    this.ws?.close();
  }
}

export interface SchedulerCounters {
  requested: number;
  sent: number;
  coalesced: number;
}

/** Debounce window queries and coalesce bursts: while a request is in
 * flight, later ones only overwrite the pending parameters; when the reply
 * lands, at most one request for the latest parameters follows. */
export class QueryScheduler<P> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: P | null = null;
  private inflight = false;
  readonly counters: SchedulerCounters = { requested: 0, sent: 0, coalesced: 0 };

  constructor(
    private send: (params: P) => Promise<void>,
    private debounceMs = 150,
  ) {}

  request(params: P): void {
    this.counters.requested += 1;
    if (this.pending !== null || this.timer !== null) {
      this.counters.coalesced += 1;
    }
    this.pending = params;
    if (this.timer === null && !this.inflight) {
      this.timer = setTimeout(() => {
        this.timer = null;
        void this.fire();
      }, this.debounceMs);
    }
  }

  /** Issue immediately (used for budget/quantity changes and watch mode). */
  requestNow(params: P): void {
    this.counters.requested += 1;
    this.pending = params;
    if (!this.inflight) {
      void this.fire();
    }
  }

  private async fire(): Promise<void> {
    if (this.inflight || this.pending === null) {
      return;
    }
    const params = this.pending;
    this.pending = null;
    this.inflight = true;
    this.counters.sent += 1;
    try {
      await this.send(params);
    } finally {
      this.inflight = false;
      if (this.pending !== null && this.timer === null) {
        void this.fire();
      }
    }
  }
}

export function backoffDelays(maxMs = 5000): () => number {
  let attempt = 0;
  return () => Math.min(maxMs, 250 * 2 ** Math.min(attempt++, 8));
}
