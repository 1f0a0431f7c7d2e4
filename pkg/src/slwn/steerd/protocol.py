"""Binary wire protocol between server and clients.

Everything is little-endian; floats are IEEE-754 binary64.

Handshake (12 bytes, sent by the client first, echoed by the server)::

    magic   4s   "SLWN"
    version u16  1
    probe   u32  0x01020304  (bytes 04 03 02 01 on the wire)
    int32   u8   4           (sizeof a 32-bit int on the sender)
    f64     u8   8           (sizeof a 64-bit float on the sender)

Frame::

    command u8 | length u32 | payload[length]

Client commands: 'V' window query, 'S' steering, 'M' metrics, 'Q' close.
Server frames: 'D' cell stream, 'A' ack, 'E' error, 'M' metrics reply.

Cell stream payload::

    quantity u8 | flags u8 (bit 0: zlib body) | count u32 |
    domain version u64 | sim time f64 | body

    body (per cell): center x,y,z f64 | width x,y,z f64 | level u8 |
    values f64 * arity

Window query payload ('V'): sim id u64 | quantity u8 | max cells u32 |
bbox lo x,y,z hi x,y,z f64*6. Steering payload ('S') is a UTF-8 JSON
object; metrics request payload ('M') is a u64 sim id.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..geometry import Box
from ..window import CellBatch, QUANTITIES, WindowQuery

MAGIC = b"SLWN"
PROTOCOL_VERSION = 1
ENDIAN_PROBE = 0x01020304
MAX_FRAME_BYTES = 64 * 1024 * 1024
COMPRESS_THRESHOLD = 64 * 1024
COMPRESS_LEVEL = 6

CMD_VIS = ord("V")
CMD_STEER = ord("S")
CMD_METRICS = ord("M")
CMD_QUIT = ord("Q")
CMD_DATA = ord("D")
CMD_ACK = ord("A")
CMD_ERROR = ord("E")

CLIENT_COMMANDS = (CMD_VIS, CMD_STEER, CMD_METRICS, CMD_QUIT)
SERVER_COMMANDS = (CMD_DATA, CMD_ACK, CMD_ERROR, CMD_METRICS)

ERR_HANDSHAKE = 1
ERR_MALFORMED = 2
ERR_UNKNOWN_COMMAND = 3
ERR_BAD_QUERY = 4
ERR_STALE = 5
ERR_REJECTED = 6
ERR_RESOURCE_CAP = 7
ERR_OVERSIZED = 8
ERR_INTERNAL = 9

QUANTITY_CODES = {"velocity": 0, "pressure": 1, "velocity_magnitude": 2}
QUANTITY_NAMES = {c: n for n, c in QUANTITY_CODES.items()}

_HANDSHAKE = struct.Struct("<4sHIBB")
_FRAME_HEAD = struct.Struct("<BI")
_STREAM_HEAD = struct.Struct("<BBIQd")
_VIS = struct.Struct("<BQBI6d")  # leading command byte included
_ACK = struct.Struct("<QQ")


class ProtocolError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def handshake_bytes() -> bytes:
    return _HANDSHAKE.pack(MAGIC, PROTOCOL_VERSION, ENDIAN_PROBE, 4, 8)


def check_handshake(data: bytes) -> None:
    if len(data) != _HANDSHAKE.size:
        raise ProtocolError(ERR_HANDSHAKE, f"handshake must be {_HANDSHAKE.size} bytes")
    magic, version, probe, int_size, f64_size = _HANDSHAKE.unpack(data)
    if magic != MAGIC:
        raise ProtocolError(ERR_HANDSHAKE, f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(ERR_HANDSHAKE, f"protocol version {version} != {PROTOCOL_VERSION}")
    if probe != ENDIAN_PROBE:
        raise ProtocolError(ERR_HANDSHAKE, f"endianness probe mismatch: 0x{probe:08x}")
    if int_size != 4 or f64_size != 8:
        raise ProtocolError(ERR_HANDSHAKE, f"type sizes {int_size}/{f64_size} != 4/8")


@dataclass(frozen=True)
class Frame:
    command: int
    payload: bytes = b""

    def encode(self) -> bytes:
        if len(self.payload) > MAX_FRAME_BYTES:
            raise ProtocolError(ERR_OVERSIZED, f"frame payload {len(self.payload)} too large")
        return _FRAME_HEAD.pack(self.command, len(self.payload)) + self.payload


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Parse one frame from the head of `data`; returns (frame, bytes used)."""
    if len(data) < _FRAME_HEAD.size:
        raise ProtocolError(ERR_MALFORMED, "truncated frame header")
    command, length = _FRAME_HEAD.unpack_from(data)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(ERR_OVERSIZED, f"frame length {length} exceeds cap")
    end = _FRAME_HEAD.size + length
    if len(data) < end:
        raise ProtocolError(ERR_MALFORMED, "truncated frame payload")
    return Frame(command, bytes(data[_FRAME_HEAD.size:end])), end


def read_frame(reader) -> Frame:
    """Read one frame from a blocking file-like object."""
    head = reader.read(_FRAME_HEAD.size)
    if not head:
        raise EOFError("connection closed")
    if len(head) < _FRAME_HEAD.size:
        raise ProtocolError(ERR_MALFORMED, "truncated frame header")
    command, length = _FRAME_HEAD.unpack(head)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(ERR_OVERSIZED, f"frame length {length} exceeds cap")
    payload = reader.read(length) if length else b""
    if len(payload) < length:
        raise ProtocolError(ERR_MALFORMED, "truncated frame payload")
    return Frame(command, payload)


# -- window queries ---------------------------------------------------------

def encode_vis_query(q: WindowQuery, sim_id: int = 0) -> Frame:
    payload = _VIS.pack(
        0, sim_id, QUANTITY_CODES[q.quantity], q.max_cells,
        *q.bbox.lo, *q.bbox.hi,
    )[1:]  # strip the placeholder command byte
    return Frame(CMD_VIS, payload)


def decode_vis_query(payload: bytes) -> tuple[WindowQuery, int]:
    if len(payload) != _VIS.size - 1:
        raise ProtocolError(ERR_MALFORMED, f"window query must be {_VIS.size - 1} bytes")
    _, sim_id, qcode, max_cells, x0, y0, z0, x1, y1, z1 = _VIS.unpack(b"\0" + payload)
    if qcode not in QUANTITY_NAMES:
        raise ProtocolError(ERR_BAD_QUERY, f"unknown quantity code {qcode}")
    if max_cells < 1:
        raise ProtocolError(ERR_BAD_QUERY, "cell budget must be >= 1")
    return WindowQuery(Box((x0, y0, z0), (x1, y1, z1)), max_cells,
                       QUANTITY_NAMES[qcode]), sim_id


# -- steering ----------------------------------------------------------------

def encode_steer(command: dict) -> Frame:
    return Frame(CMD_STEER, json.dumps(command, sort_keys=True).encode())


def decode_steer(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(ERR_MALFORMED, f"steering payload is not JSON: {exc}") from None
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ProtocolError(ERR_MALFORMED, "steering payload must be an object with 'kind'")
    return obj


def encode_ack(applied_step: int, assigned_id: int = 0) -> Frame:
    return Frame(CMD_ACK, _ACK.pack(applied_step, assigned_id))


def decode_ack(payload: bytes) -> tuple[int, int]:
    if len(payload) != _ACK.size:
        raise ProtocolError(ERR_MALFORMED, "bad ack payload")
    return _ACK.unpack(payload)


def encode_error(code: int, message: str) -> Frame:
    return Frame(CMD_ERROR, struct.pack("<H", code) + message.encode())


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError(ERR_MALFORMED, "bad error payload")
    (code,) = struct.unpack_from("<H", payload)
    return code, payload[2:].decode(errors="replace")


def encode_metrics_request(sim_id: int = 0) -> Frame:
    return Frame(CMD_METRICS, struct.pack("<Q", sim_id))


def decode_metrics_request(payload: bytes) -> int:
    if len(payload) != 8:
        raise ProtocolError(ERR_MALFORMED, "metrics request must carry a u64 sim id")
    return struct.unpack("<Q", payload)[0]


def encode_metrics_reply(metrics: dict) -> Frame:
    return Frame(CMD_METRICS, json.dumps(metrics, sort_keys=True).encode())


def decode_metrics_reply(payload: bytes) -> dict:
    return json.loads(payload.decode())


# -- cell streams -------------------------------------------------------------

def _record_dtype(arity: int) -> np.dtype:
    return np.dtype([
        ("center", "<f8", (3,)),
        ("width", "<f8", (3,)),
        ("level", "u1"),
        ("values", "<f8", (arity,)),
    ])


def encode_cellstream(batch: CellBatch, compress: bool | None = None) -> bytes:
    arity = QUANTITIES[batch.quantity]
    recs = np.zeros(batch.count, dtype=_record_dtype(arity))
    recs["center"] = batch.centers
    recs["width"] = batch.widths
    recs["level"] = batch.levels
    recs["values"] = batch.values
    body = recs.tobytes()
    if compress is None:
        compress = len(body) > COMPRESS_THRESHOLD
    flags = 0
    if compress:
        body = zlib.compress(body, COMPRESS_LEVEL)
        flags |= 1
    head = _STREAM_HEAD.pack(QUANTITY_CODES[batch.quantity], flags,
                             batch.count, batch.version, batch.time)
    return head + body


def decode_cellstream(payload: bytes) -> CellBatch:
    if len(payload) < _STREAM_HEAD.size:
        raise ProtocolError(ERR_MALFORMED, "truncated cell stream header")
    qcode, flags, count, version, time = _STREAM_HEAD.unpack_from(payload)
    if qcode not in QUANTITY_NAMES:
        raise ProtocolError(ERR_MALFORMED, f"unknown quantity code {qcode}")
    quantity = QUANTITY_NAMES[qcode]
    arity = QUANTITIES[quantity]
    body = payload[_STREAM_HEAD.size:]
    if flags & 1:
        body = zlib.decompress(body)
    dtype = _record_dtype(arity)
    if len(body) != count * dtype.itemsize:
        raise ProtocolError(
            ERR_MALFORMED,
            f"cell stream body {len(body)} bytes, expected {count * dtype.itemsize}")
    recs = np.frombuffer(body, dtype=dtype)
    return CellBatch(
        quantity,
        recs["center"].astype(float).reshape(count, 3),
        recs["width"].astype(float).reshape(count, 3),
        recs["level"].astype(np.uint8).copy(),
        recs["values"].astype(float).reshape(count, arity),
        version, time,
    )
