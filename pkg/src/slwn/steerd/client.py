"""Blocking client for the collector protocol, used by the CLI and tests."""

from __future__ import annotations

import socket

from ..window import CellBatch, WindowQuery
from . import protocol as proto


class ServerError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code}: {message}")
        self.code = code


class Client:
    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.f = self.sock.makefile("rwb")
        self.f.write(proto.handshake_bytes())
        self.f.flush()
        reply = self.f.read(12)
        if len(reply) == 12:
            proto.check_handshake(reply)
            return
        # the server may answer a bad handshake with an error frame
        frame, _ = proto.decode_frame(reply + self.f.read(proto.MAX_FRAME_BYTES))
        code, msg = proto.decode_error(frame.payload)
        raise ServerError(code, msg)

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _roundtrip(self, frame: proto.Frame) -> proto.Frame:
        self.f.write(frame.encode())
        self.f.flush()
        reply = proto.read_frame(self.f)
        if reply.command == proto.CMD_ERROR:
            code, msg = proto.decode_error(reply.payload)
            raise ServerError(code, msg)
        return reply

    def query_raw(self, q: WindowQuery, sim_id: int = 0) -> bytes:
        reply = self._roundtrip(proto.encode_vis_query(q, sim_id))
        if reply.command != proto.CMD_DATA:
            raise ServerError(proto.ERR_MALFORMED,
                              f"expected data frame, got 0x{reply.command:02x}")
        return reply.payload

    def query(self, q: WindowQuery, sim_id: int = 0) -> CellBatch:
        return proto.decode_cellstream(self.query_raw(q, sim_id))

    def steer(self, command: dict) -> tuple[int, int]:
        reply = self._roundtrip(proto.encode_steer(command))
        if reply.command != proto.CMD_ACK:
            raise ServerError(proto.ERR_MALFORMED,
                              f"expected ack frame, got 0x{reply.command:02x}")
        return proto.decode_ack(reply.payload)

    def metrics(self, sim_id: int = 0) -> dict:
        reply = self._roundtrip(proto.encode_metrics_request(sim_id))
        if reply.command != proto.CMD_METRICS:
            raise ServerError(proto.ERR_MALFORMED,
                              f"expected metrics frame, got 0x{reply.command:02x}")
        return proto.decode_metrics_reply(reply.payload)

    def close(self) -> None:
        try:
            self.f.write(proto.Frame(proto.CMD_QUIT).encode())
            self.f.flush()
        except OSError:
            pass
        self.f.close()
        self.sock.close()
