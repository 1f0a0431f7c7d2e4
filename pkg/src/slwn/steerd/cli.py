"""Command-line front end: run the server or talk to one.

    slwn serve  --port 7851 --config cavity.json [--ws-port 7852] [--ui-dir d]
    slwn query  --port 7851 --bbox 0,0,1,1 --max-cells 400 --quantity pressure
    slwn steer  --port 7851 --pause | --lid 1.0 | --json '{"kind": ...}'
    slwn watch  --port 7851 --rate 2 --duration 5 --bbox 0,0,1,1
    slwn export-vtk --port 7851 --bbox 0,0,1,1 --out stream.vtk

The SLWN_PORT environment variable overrides the default port.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from ..config import build_simulation, load_config
from ..geometry import Box
from ..vtkio import write_unstructured
from ..window import WindowQuery
from .client import Client, ServerError
from .server import Server

DEFAULT_PORT = 7851


def _port_default() -> int:
    return int(os.environ.get("SLWN_PORT", DEFAULT_PORT))


def _parse_bbox(text: str) -> Box:
    parts = [float(x) for x in text.split(",")]
    if len(parts) == 4:  # 2D shorthand: x0,y0,x1,y1 over the full z range
        x0, y0, x1, y1 = parts
        return Box((x0, y0, -1e30), (x1, y1, 1e30))
    if len(parts) == 6:
        x0, y0, z0, x1, y1, z1 = parts
        return Box((x0, y0, z0), (x1, y1, z1))
    raise argparse.ArgumentTypeError("bbox must be x0,y0,x1,y1 or x0,y0,z0,x1,y1,z1")


def _add_connection_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=_port_default())
    p.add_argument("--sim-id", type=int, default=0,
                   help="0 = main run, otherwise a sub-simulation id")


def _add_query_args(p: argparse.ArgumentParser) -> None:
    _add_connection_args(p)
    p.add_argument("--bbox", required=True, type=_parse_bbox)
    p.add_argument("--max-cells", type=int, default=400)
    p.add_argument("--quantity", default="velocity",
                   choices=("velocity", "pressure", "velocity_magnitude"))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slwn", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("serve", help="run the simulation server")
    p.add_argument("--port", type=int, default=_port_default())
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--export-dir", help="also dump every stream to this directory")
    p.add_argument("--max-subs", type=int, default=4)
    p.add_argument("--metrics-csv", help="per-step metrics log")
    p.add_argument("--ws-port", type=int, help="also open a WebSocket gateway")
    p.add_argument("--ui-dir", help="static UI bundle served by the gateway")

    p = sub.add_parser("query", help="one window query, print the cells")
    _add_query_args(p)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--limit", type=int, default=20, help="rows to print (0 = all)")

    p = sub.add_parser("steer", help="send one steering command")
    _add_connection_args(p)
    p.add_argument("--json", help="raw steering command as JSON")
    p.add_argument("--pause", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--lid", type=float, help="set the moving-lid velocity")
    p.add_argument("--viscosity", type=float)
    p.add_argument("--refine", type=_parse_bbox, metavar="BBOX",
                   help="refine all grids intersecting this region")
    p.add_argument("--spawn-sub", type=_parse_bbox, metavar="BBOX",
                   help="start a fine-scale sub-simulation of this region")
    p.add_argument("--depth", type=int, default=1, help="extra levels for --spawn-sub")

    p = sub.add_parser("watch", help="poll a window at a fixed rate")
    _add_query_args(p)
    p.add_argument("--rate", type=float, default=2.0, help="queries per second")
    p.add_argument("--duration", type=float, default=5.0, help="seconds")

    p = sub.add_parser("export-vtk", help="query once and write a legacy VTK file")
    _add_query_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="print server metrics as JSON")
    _add_connection_args(p)
    return parser


def cmd_serve(args) -> int:
    import logging
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    cfg = load_config(args.config)
    sim = build_simulation(cfg, metrics_path=args.metrics_csv)
    server = Server(sim, port=args.port, host=args.host,
                    export_dir=args.export_dir, max_subs=args.max_subs)
    server.start()
    print(f"collector listening on {args.host}:{server.port}", flush=True)
    gateway = None
    if args.ws_port is not None:
        from .gateway import Gateway
        gateway = Gateway(args.host, server.port, host=args.host,
                          port=args.ws_port, ui_dir=args.ui_dir)
        gateway.start()
        print(f"gateway listening on {args.host}:{gateway.port}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        if gateway:
            gateway.stop()
        server.stop()
    return 0


def _print_batch(batch, limit: int, as_json: bool) -> None:
    if as_json:
        rows = [
            {
                "center": batch.centers[i].tolist(),
                "width": batch.widths[i].tolist(),
                "level": int(batch.levels[i]),
                "values": batch.values[i].tolist(),
            }
            for i in range(batch.count)
        ]
        print(json.dumps({"quantity": batch.quantity, "count": batch.count,
                          "time": batch.time, "cells": rows}))
        return
    print(f"# quantity={batch.quantity} cells={batch.count} t={batch.time:.6g} "
          f"version={batch.version}")
    n = batch.count if limit == 0 else min(limit, batch.count)
    for i in range(n):
        c = batch.centers[i]
        vals = " ".join(f"{v: .6g}" for v in batch.values[i])
        print(f"{c[0]: .6g} {c[1]: .6g} {c[2]: .6g}  L{int(batch.levels[i])}  {vals}")
    if n < batch.count:
        print(f"... ({batch.count - n} more cells)")


def cmd_query(args) -> int:
    q = WindowQuery(args.bbox, args.max_cells, args.quantity)
    with Client(args.host, args.port) as client:
        batch = client.query(q, args.sim_id)
    _print_batch(batch, args.limit, args.json)
    return 0


def cmd_steer(args) -> int:
    commands = []
    if args.json:
        commands.append(json.loads(args.json))
    if args.pause:
        commands.append({"kind": "pause"})
    if args.resume:
        commands.append({"kind": "resume"})
    if args.lid is not None:
        commands.append({"kind": "set_boundary", "face": "y+",
                         "bc": {"kind": "moving_wall",
                                "velocity": [args.lid, 0.0, 0.0]}})
    if args.viscosity is not None:
        commands.append({"kind": "set_viscosity", "value": args.viscosity})
    if args.refine is not None:
        commands.append({"kind": "refine", "region": args.refine.as_json()})
    if args.spawn_sub is not None:
        commands.append({"kind": "spawn_sub", "region": args.spawn_sub.as_json(),
                         "depth": args.depth})
    if not commands:
        print("nothing to do: pass --json or one of the convenience flags",
              file=sys.stderr)
        return 2
    with Client(args.host, args.port) as client:
        for cmd in commands:
            applied_at, assigned = client.steer(cmd)
            note = f" id={assigned}" if assigned else ""
            print(f"{cmd['kind']}: applies at step {applied_at}{note}")
    return 0


def cmd_watch(args) -> int:
    q = WindowQuery(args.bbox, args.max_cells, args.quantity)
    period = 1.0 / args.rate
    deadline = time.monotonic() + args.duration
    frames = 0
    with Client(args.host, args.port) as client:
        while time.monotonic() < deadline:
            start = time.monotonic()
            batch = client.query(q, args.sim_id)
            frames += 1
            vmax = float(batch.values.max()) if batch.count else 0.0
            print(f"[{frames:4d}] t={batch.time:.6g} cells={batch.count} "
                  f"max={vmax:.6g}", flush=True)
            time.sleep(max(0.0, period - (time.monotonic() - start)))
    print(f"{frames} streams received")
    return 0


def cmd_export_vtk(args) -> int:
    q = WindowQuery(args.bbox, args.max_cells, args.quantity)
    with Client(args.host, args.port) as client:
        batch = client.query(q, args.sim_id)
    write_unstructured(batch, args.out)
    print(f"wrote {batch.count} cells to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    with Client(args.host, args.port) as client:
        print(json.dumps(client.metrics(args.sim_id), indent=1, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    handlers = {
        "serve": cmd_serve, "query": cmd_query, "steer": cmd_steer,
        "watch": cmd_watch, "export-vtk": cmd_export_vtk, "metrics": cmd_metrics,
    }
    try:
        return handlers[args.verb](args)
    except (ServerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
