"""WebSocket gateway: bridges the framed binary protocol 1:1 onto WebSocket
binary messages and serves the static UI bundle over plain HTTP."""

from __future__ import annotations

import logging
import mimetypes
import socket
import threading
from http import HTTPStatus
from pathlib import Path

from websockets.datastructures import Headers
from websockets.http11 import Response
from websockets.sync.server import serve

from . import protocol as proto

log = logging.getLogger(__name__)

_WS_MAX = proto.MAX_FRAME_BYTES + 16


class Gateway:
    """One WebSocket message <-> one protocol frame, relayed to the TCP
    collector; anything that is not a WebSocket upgrade is answered with a
    file from the UI directory."""

    def __init__(self, collector_host: str, collector_port: int,
                 host: str = "127.0.0.1", port: int = 0,
                 ui_dir: str | None = None):
        self.collector = (collector_host, collector_port)
        self.ui_dir = Path(ui_dir).resolve() if ui_dir else None
        self._server = serve(
            self._handle, host, port,
            process_request=self._process_request,
            max_size=_WS_MAX,
            compression=None,
        )
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True, name="slwn-gateway")

    @property
    def port(self) -> int:
        return self._server.socket.getsockname()[1]

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()

    # -- static files ------------------------------------------------------

    def _process_request(self, connection, request):
        if "Sec-WebSocket-Key" in request.headers:
            return None  # proceed with the upgrade
        return self._serve_file(request.path)

    def _serve_file(self, path: str):
        if self.ui_dir is None:
            return _response(HTTPStatus.NOT_FOUND, b"no UI bundle configured\n")
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir)) or not target.is_file():
            return _response(HTTPStatus.NOT_FOUND, b"not found\n")
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return _response(HTTPStatus.OK, target.read_bytes(), ctype)

    # -- frame bridging ------------------------------------------------------

    def _handle(self, ws) -> None:
        try:
            first = ws.recv()
        except Exception:
            return
        tcp = socket.create_connection(self.collector, timeout=60)
        f = tcp.makefile("rwb")
        try:
            f.write(bytes(first))
            f.flush()
            head = f.read(1)
            if not head:
                return
            if head == b"S":  # handshake echo: "SLWN" + 8 bytes
                ws.send(head + f.read(11))
            else:  # an error frame
                rest = f.read(4)
                _, length = proto._FRAME_HEAD.unpack(head + rest)
                ws.send(head + rest + f.read(length))
                return
            pump = threading.Thread(
                target=self._pump_replies, args=(f, ws), daemon=True)
            pump.start()
            for message in ws:
                f.write(bytes(message))
                f.flush()
        except Exception:  # noqa: BLE001 - connection teardown
            pass
        finally:
            try:
                tcp.close()
            except OSError:
                pass

    @staticmethod
    def _pump_replies(f, ws) -> None:
        try:
            while True:
                frame = proto.read_frame(f)
                ws.send(frame.encode())
        except (EOFError, OSError, proto.ProtocolError):
            pass
        except Exception:  # noqa: BLE001 - socket closed under us
            pass


def _response(status: HTTPStatus, body: bytes, ctype: str = "text/plain") -> Response:
    headers = Headers([
        ("Content-Type", ctype),
        ("Content-Length", str(len(body))),
        ("Connection", "close"),
    ])
    return Response(status.value, status.phrase, headers, body)
