/**
 * Binary wire protocol (client side).
 *
 * Everything little-endian, floats are IEEE-754 binary64.
 * Handshake: "SLWN" | u16 version | u32 probe 0x01020304 | u8 4 | u8 8.
 * Frame: u8 command | u32 length | payload.
 * Cell stream payload: u8 quantity | u8 flags (bit0 zlib) | u32 count |
 * u64 version | f64 time | records (center 3f64, width 3f64, level u8,
 * values arity*f64).
 */

export const PROTOCOL_VERSION = 1;
export const MAX_FRAME_BYTES = 64 * 1024 * 1024;

export const CMD = {
  VIS: 0x56, // 'V'
  STEER: 0x53, // 'S'
  METRICS: 0x4d, // 'M'
  QUIT: 0x51, // 'Q'
  DATA: 0x44, // 'D'
  ACK: 0x41, // 'A'
  ERROR: 0x45, // 'E'
} as const;

export type Quantity = "velocity" | "pressure" | "velocity_magnitude";

export const QUANTITY_CODES: Record<Quantity, number> = {
  velocity: 0,
  pressure: 1,
  velocity_magnitude: 2,
};

const QUANTITY_NAMES: Quantity[] = ["velocity", "pressure", "velocity_magnitude"];

export const QUANTITY_ARITY: Record<Quantity, number> = {
  velocity: 3,
  pressure: 1,
  velocity_magnitude: 1,
};

export interface Frame {
  command: number;
  payload: Uint8Array;
}

export interface BBox {
  lo: [number, number, number];
  hi: [number, number, number];
}

export interface CellStream {
  quantity: Quantity;
  count: number;
  version: number;
  time: number;
  /** cell centres, length 3*count */
  centers: Float64Array;
  /** cell widths, length 3*count */
  widths: Float64Array;
  levels: Uint8Array;
  /** length arity*count */
  values: Float64Array;
}

export function handshakeBytes(): Uint8Array {
  const buf = new Uint8Array(12);
  const dv = new DataView(buf.buffer);
  buf.set([0x53, 0x4c, 0x57, 0x4e], 0); // "SLWN"
  dv.setUint16(4, PROTOCOL_VERSION, true);
  dv.setUint32(6, 0x01020304, true);
  buf[10] = 4;
  buf[11] = 8;
  return buf;
}

export function checkHandshake(data: Uint8Array): void {
  const want = handshakeBytes();
  if (data.length !== want.length) {
    throw new Error(`handshake must be ${want.length} bytes, got ${data.length}`);
  }
  for (let i = 0; i < want.length; i++) {
    if (data[i] !== want[i]) {
      throw new Error(`handshake mismatch at byte ${i}`);
    }
  }
}

export function encodeFrame(frame: Frame): Uint8Array {
  if (frame.payload.length > MAX_FRAME_BYTES) {
    throw new Error("frame payload exceeds the 64 MiB cap");
  }
  const out = new Uint8Array(5 + frame.payload.length);
  const dv = new DataView(out.buffer);
  out[0] = frame.command;
  dv.setUint32(1, frame.payload.length, true);
  out.set(frame.payload, 5);
  return out;
}

export function decodeFrame(data: Uint8Array): Frame {
  if (data.length < 5) {
    throw new Error("truncated frame header");
  }
  const dv = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const length = dv.getUint32(1, true);
  if (length > MAX_FRAME_BYTES) {
    throw new Error("frame length exceeds the 64 MiB cap");
  }
  if (data.length < 5 + length) {
    throw new Error("truncated frame payload");
  }
  return { command: data[0], payload: data.slice(5, 5 + length) };
}

export function encodeVisQuery(
  bbox: BBox, maxCells: number, quantity: Quantity, simId = 0,
): Uint8Array {
  const payload = new Uint8Array(61);
  const dv = new DataView(payload.buffer);
  dv.setBigUint64(0, BigInt(simId), true);
  payload[8] = QUANTITY_CODES[quantity];
  dv.setUint32(9, maxCells, true);
  const coords = [...bbox.lo, ...bbox.hi];
  coords.forEach((c, i) => dv.setFloat64(13 + 8 * i, c, true));
  return encodeFrame({ command: CMD.VIS, payload });
}

export function encodeSteer(command: Record<string, unknown>): Uint8Array {
  const payload = new TextEncoder().encode(JSON.stringify(command));
  return encodeFrame({ command: CMD.STEER, payload });
}

export function encodeMetricsRequest(simId = 0): Uint8Array {
  const payload = new Uint8Array(8);
  new DataView(payload.buffer).setBigUint64(0, BigInt(simId), true);
  return encodeFrame({ command: CMD.METRICS, payload });
}

export function decodeAck(payload: Uint8Array): { appliedStep: number; assignedId: number } {
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  return {
    appliedStep: Number(dv.getBigUint64(0, true)),
    assignedId: Number(dv.getBigUint64(8, true)),
  };
}

export function decodeError(payload: Uint8Array): { code: number; message: string } {
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  return {
    code: dv.getUint16(0, true),
    message: new TextDecoder().decode(payload.slice(2)),
  };
}

export function decodeMetrics(payload: Uint8Array): Record<string, unknown> {
  return JSON.parse(new TextDecoder().decode(payload));
}

async function inflate(data: Uint8Array): Promise<Uint8Array> {
  // zlib-wrapped deflate, as produced by the server
  const ds = new DecompressionStream("deflate");
  const stream = new Blob([data as BlobPart]).stream().pipeThrough(ds);
  const buf = await new Response(stream).arrayBuffer();
  return new Uint8Array(buf);
}

export async function decodeCellStream(payload: Uint8Array): Promise<CellStream> {
  if (payload.length < 22) {
    throw new Error("truncated cell stream header");
  }
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const qcode = dv.getUint8(0);
  const flags = dv.getUint8(1);
  const count = dv.getUint32(2, true);
  const version = Number(dv.getBigUint64(6, true));
  const time = dv.getFloat64(14, true);
  const quantity = QUANTITY_NAMES[qcode];
  if (quantity === undefined) {
    throw new Error(`unknown quantity code ${qcode}`);
  }
  const arity = QUANTITY_ARITY[quantity];
  let body: Uint8Array = payload.slice(22);
  if (flags & 1) {
    body = await inflate(body);
  }
  const recordSize = 49 + 8 * arity;
  if (body.length !== count * recordSize) {
    throw new Error(
      `cell stream body is ${body.length} bytes, expected ${count * recordSize}`);
  }
  const centers = new Float64Array(3 * count);
  const widths = new Float64Array(3 * count);
  const levels = new Uint8Array(count);
  const values = new Float64Array(arity * count);
  const bd = new DataView(body.buffer, body.byteOffset, body.byteLength);
  for (let c = 0; c < count; c++) {
    let off = c * recordSize;
    for (let a = 0; a < 3; a++) {
      centers[3 * c + a] = bd.getFloat64(off, true);
      off += 8;
    }
    for (let a = 0; a < 3; a++) {
      widths[3 * c + a] = bd.getFloat64(off, true);
      off += 8;
    }
    levels[c] = bd.getUint8(off);
    off += 1;
    for (let a = 0; a < arity; a++) {
      values[arity * c + a] = bd.getFloat64(off, true);
      off += 8;
    }
  }
  return { quantity, count, version, time, centers, widths, levels, values };
}

/** Re-serialise a decoded stream's records (uncompressed layout); lets any
 * decoder be checked for exactness against a byte digest. */
export function encodeRecords(stream: CellStream): Uint8Array {
  const arity = QUANTITY_ARITY[stream.quantity];
  const recordSize = 49 + 8 * arity;
  const out = new Uint8Array(stream.count * recordSize);
  const dv = new DataView(out.buffer);
  for (let c = 0; c < stream.count; c++) {
    let off = c * recordSize;
    for (let a = 0; a < 3; a++) {
      dv.setFloat64(off, stream.centers[3 * c + a], true);
      off += 8;
    }
    for (let a = 0; a < 3; a++) {
      dv.setFloat64(off, stream.widths[3 * c + a], true);
      off += 8;
    }
    dv.setUint8(off, stream.levels[c]);
    off += 1;
    for (let a = 0; a < arity; a++) {
      dv.setFloat64(off, stream.values[arity * c + a], true);
      off += 8;
    }
  }
  return out;
}

/** Scalar display value of one cell (magnitude for vector quantities). */
export function displayValue(stream: CellStream, cell: number): number {
  const arity = QUANTITY_ARITY[stream.quantity];
  if (arity === 1) {
    return stream.values[cell];
  }
  let s = 0;
  for (let a = 0; a < arity; a++) {
    const v = stream.values[arity * cell + a];
    s += v * v;
  }
  return Math.sqrt(s);
}
