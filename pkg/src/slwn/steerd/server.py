"""Collector service: TCP command loop, steering queue, visualization
pipeline and fine-scale sub-simulations.

Three execution contexts cooperate: the simulation runner thread owns the
forest and advances it; collector connection threads speak the byte protocol
with clients; the only rendezvous are two message queues drained by the
runner once per time step, so a client request never blocks the solve for
longer than one queue handoff.
"""

from __future__ import annotations

import logging
import math
import os
import queue
import socketserver
import threading
import time as _time
from concurrent.futures import Future
from dataclasses import dataclass

import numpy as np

from ..geometry import AXES, Box, FACES, face_from_name
from ..hiergrid import Forest, GridNode, PRESSURE, VELOCITY
from ..solver import (
    BoundaryCondition, BoundarySpec, COUPLED, FluidParams, Simulation,
    make_bc_apply, stable_dt,
)
from ..window import (
    BudgetError, CellBatch, StaleSelectionError, WindowQuery, extract, select,
)
from . import protocol as proto

log = logging.getLogger(__name__)


class SteeringRejected(ValueError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- point sampling of the running solution ---------------------------------

def sample_forest(forest: Forest, points: np.ndarray,
                  quantities: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Piecewise-constant lookup of the active-leaf solution at given points.

    Points may lie up to one ghost cell outside the domain: the lookup then
    lands in the ghost layer of the adjacent leaf, which holds the
    boundary-applied values after an exchange cycle.
    """
    dom = forest.domain
    clamped = np.clip(points, np.asarray(dom.lo), np.asarray(dom.hi))
    out = {name: np.empty(len(points)) for name in quantities}
    for row, (p, pc) in enumerate(zip(points, clamped)):
        node = _leaf_at(forest, pc)
        idx = []
        for a in AXES:
            h = node.spacing(a)
            i = int(math.floor((p[a] - node.bbox.lo[a]) / h)) + 1
            idx.append(min(max(i, 0), node.cells[a] + 1))
        for name in quantities:
            out[name][row] = node.fields[name][tuple(idx)]
    return out


def _leaf_at(forest: Forest, p: np.ndarray) -> GridNode:
    def tile_index(lo, extent, n, coord):
        i = int(math.floor((coord - lo) / extent * n))
        return min(max(i, 0), n - 1)

    node = None
    for rid in forest.roots:
        root = forest.grid(rid)
        box = root.bbox
        if all(box.lo[a] <= p[a] <= box.hi[a] for a in AXES):
            node = root
            break
    if node is None:  # clamped points always hit a root; guard anyway
        node = forest.grid(forest.roots[0])
    while node.children:
        sub = node.subdiv
        ci = tuple(
            tile_index(node.bbox.lo[a], node.bbox.extent(a), sub[a], p[a])
            for a in AXES
        )
        node = forest.grid(node.children[(ci[2] * sub[1] + ci[1]) * sub[0] + ci[0]])
    return node


# -- fine-scale sub-simulation ------------------------------------------------

class SubSimulation:
    """Re-computation of a sub-region on a finer grid, fed each coarse step
    with interpolated coarse results as boundary data (one-way coupling)."""

    def __init__(self, sub_id: int, main: Simulation, region: Box, depth: int):
        self.id = sub_id
        main_forest = main.forest
        dom = main_forest.domain
        region = self._snap_region(region, main_forest)
        finest = self._finest_spacings(main_forest, region)
        cells = []
        for a in AXES:
            n = region.extent(a) / finest[a]
            if abs(n - round(n)) > 1e-6:
                raise SteeringRejected(
                    proto.ERR_REJECTED,
                    f"region extent along axis {a} is not a whole number of "
                    f"fine cells ({n:.6f})")
            cells.append(max(1, int(round(n))))
        forest = Forest(region, (1, 1, 1), tuple(cells),
                        main_forest.subdiv_table,
                        max_depth=max(depth, 0))
        forest.refine_uniformly(depth)

        tol = 1e-9 * max(dom.extents())
        self.coupled_faces = [
            f for f in FACES
            if abs(region.face_coord(f) - dom.face_coord(f)) > tol
        ]
        bc = BoundarySpec({f: main.bc.condition(f) for f in FACES})
        self.params = FluidParams(
            rho=main.params.rho, nu=main.params.nu, dt=main.params.dt,
            cfl=main.params.cfl, poisson_tol=main.params.poisson_tol,
            poisson_max_iter=main.params.poisson_max_iter,
            adaptive_dt=False, poisson_omega=main.params.poisson_omega,
        )
        self.sim = Simulation(forest, self.params, bc)
        self.sim.t = main.t
        self._coupling_ghosts: dict = {}
        if self.coupled_faces:
            self.sim.bc_override = self._make_bc_apply()
            self.sim.fix_gauge = False
        self._init_state(main)
        self.couple(main)

    @staticmethod
    def _snap_region(region: Box, forest: Forest) -> Box:
        dom = forest.domain
        lo = list(np.clip(region.lo, dom.lo, dom.hi))
        hi = list(np.clip(region.hi, dom.lo, dom.hi))
        for a in AXES:
            # single-cell axes stay at full extent (pseudo-2D runs)
            if all(g.cells[a] == 1 for g in forest.grids.values()):
                lo[a], hi[a] = dom.lo[a], dom.hi[a]
            if hi[a] <= lo[a]:
                raise SteeringRejected(
                    proto.ERR_REJECTED, "region has no volume inside the domain")
        return Box(tuple(lo), tuple(hi))

    @staticmethod
    def _finest_spacings(forest: Forest, region: Box) -> tuple[float, ...]:
        best: dict[int, float] = {}
        for g in forest.active_grids():
            if g.bbox.intersection(region) is None:
                continue
            for a in AXES:
                h = g.spacing(a)
                best[a] = min(best.get(a, h), h)
        if not best:
            raise SteeringRejected(proto.ERR_REJECTED,
                                   "region intersects no active grid")
        return tuple(best[a] for a in AXES)

    def _init_state(self, main: Simulation) -> None:
        for g in self.sim.forest.active_grids():
            pts = _cell_center_points(g)
            sampled = sample_forest(main.forest, pts, VELOCITY + PRESSURE)
            shape = tuple(g.cells)
            for name in VELOCITY + PRESSURE:
                g.fields.interior(name)[...] = sampled[name].reshape(shape)

    def couple(self, main: Simulation) -> None:
        """Refresh the coupled ghost faces from the current coarse solution."""
        self._coupling_ghosts = {}
        topo = self.sim.topo
        for g in self.sim.forest.active_grids():
            for face in self.coupled_faces:
                if not topo.is_physical_face(g.id, face):
                    continue
                pts = _ghost_center_points(g, face)
                sampled = sample_forest(main.forest, pts, VELOCITY + PRESSURE)
                self._coupling_ghosts[(g.id, face)] = sampled

    def boundary_values(self, grid_id: int, face) -> dict | None:
        return self._coupling_ghosts.get((grid_id, face))

    def advance_to(self, t_target: float) -> None:
        remaining = t_target - self.sim.t
        if remaining <= 0:
            return
        limit = stable_dt(self.sim.forest, self.params)
        n = max(1, int(math.ceil(remaining / limit - 1e-9)))
        self.params.dt = remaining / n
        for _ in range(n):
            self.sim.step()

    def _make_bc_apply(self):
        base = make_bc_apply(self.sim.bc)
        starred_of = {"us": "u", "vs": "v", "ws": "w"}

        def apply(grid, face, quantities):
            sampled = self._coupling_ghosts.get((grid.id, face))
            if sampled is None:
                base(grid, face, quantities)
                return
            if grid.phys_bc is None:
                grid.phys_bc = {}
            grid.phys_bc[face] = BoundaryCondition(COUPLED)
            sel = [slice(1, -1)] * 3
            sel[face.axis] = slice(0, 1) if face.side == 0 else slice(-1, None)
            sel = tuple(sel)
            shape = grid.fields["u"][sel].shape
            for name in quantities:
                if name == "pd":  # homogeneous data for operator applications
                    grid.fields[name][sel] = 0.0
                    continue
                src = starred_of.get(name, name)
                grid.fields[name][sel] = sampled[src].reshape(shape)

        return apply


def _cell_center_points(grid: GridNode) -> np.ndarray:
    cx, cy, cz = (grid.centers(a) for a in AXES)
    gx, gy, gz = np.meshgrid(cx, cy, cz, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def _ghost_center_points(grid: GridNode, face) -> np.ndarray:
    coords = []
    for a in AXES:
        if a == face.axis:
            h = grid.spacing(a)
            c = (grid.bbox.lo[a] - 0.5 * h if face.side == 0
                 else grid.bbox.hi[a] + 0.5 * h)
            coords.append(np.array([c]))
        else:
            coords.append(grid.centers(a))
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


# -- the runner thread --------------------------------------------------------

@dataclass
class _VizRequest:
    query: WindowQuery
    sim_id: int
    future: Future


@dataclass
class _SteerRequest:
    command: dict
    future: Future


class SimulationService(threading.Thread):
    """Owns the simulation state; drains steering and visualization queues
    exactly once per time step."""

    def __init__(self, sim: Simulation, max_subs: int = 4):
        super().__init__(daemon=True, name="slwn-runner")
        self.sim = sim
        self.max_subs = max_subs
        self.subs: dict[int, SubSimulation] = {}
        self._next_sub_id = 1
        self._steer_q: queue.Queue[_SteerRequest] = queue.Queue()
        self._viz_q: queue.Queue[_VizRequest] = queue.Queue()
        self._stop_event = threading.Event()
        self.paused = False
        self.counters = {
            "steps": 0, "viz_serviced": 0, "steer_applied": 0,
            "runner_blocked": 0,
        }

    # client-facing API (any thread)

    def submit_viz(self, q: WindowQuery, sim_id: int = 0) -> Future:
        fut: Future = Future()
        self._viz_q.put(_VizRequest(q, sim_id, fut))
        return fut

    def submit_steer(self, command: dict) -> Future:
        fut: Future = Future()
        self._steer_q.put(_SteerRequest(command, fut))
        return fut

    def metrics(self, sim_id: int = 0) -> dict:
        sim = self._route(sim_id).sim if sim_id else self.sim
        return {
            "sim_id": sim_id,
            "step": sim.step_index,
            "t": sim.t,
            "dt": sim.params.dt,
            "paused": self.paused,
            "domain_version": sim.forest.version,
            "domain": sim.forest.domain.as_json(),
            "max_depth": sim.forest.max_depth,
            "subs": sorted(self.subs),
            "counters": dict(self.counters),
        }

    def stop(self) -> None:
        self._stop_event.set()

    # runner internals

    def run(self) -> None:
        while not self._stop_event.is_set():
            self._service()
            if self.paused:
                _time.sleep(5e-4)
                continue
            self.sim.step()
            self.counters["steps"] += 1
            for sub in self.subs.values():
                sub.couple(self.sim)
                sub.advance_to(self.sim.t)

    def _service(self) -> None:
        while True:
            try:
                req = self._steer_q.get_nowait()
            except queue.Empty:
                break
            try:
                applied_at = self.sim.step_index + 1
                assigned = self._apply(req.command)
                self.counters["steer_applied"] += 1
                req.future.set_result((applied_at, assigned))
            except Exception as exc:  # noqa: BLE001 - forwarded to the client
                req.future.set_exception(exc)
        while True:
            try:
                req = self._viz_q.get_nowait()
            except queue.Empty:
                break
            try:
                req.future.set_result(self._visualize(req.query, req.sim_id))
                self.counters["viz_serviced"] += 1
            except Exception as exc:  # noqa: BLE001
                req.future.set_exception(exc)

    def _route(self, sim_id: int):
        if sim_id == 0:
            return self
        try:
            return self.subs[sim_id]
        except KeyError:
            raise SteeringRejected(proto.ERR_BAD_QUERY,
                                   f"unknown sub-simulation {sim_id}") from None

    def _visualize(self, q: WindowQuery, sim_id: int) -> CellBatch:
        sim = self.sim if sim_id == 0 else self._route(sim_id).sim
        try:
            sel = select(sim.topo, q)
            return extract(sim.forest, sel, time=sim.t)
        except StaleSelectionError:
            sim.refresh_topology()
            sel = select(sim.topo, q)
            return extract(sim.forest, sel, time=sim.t)

    def _apply(self, cmd: dict) -> int:
        kind = cmd.get("kind")
        sim = self.sim
        if kind == "pause":
            self.paused = True
            return 0
        if kind == "resume":
            self.paused = False
            return 0
        if kind == "set_viscosity":
            value = float(cmd["value"])
            if value < 0:
                raise SteeringRejected(proto.ERR_REJECTED, "viscosity must be >= 0")
            sim.params.nu = value
            return 0
        if kind == "set_boundary":
            face = face_from_name(cmd["face"])
            spec = cmd["bc"]
            cond = BoundaryCondition(spec["kind"],
                                     tuple(spec.get("velocity", (0, 0, 0))))
            try:
                sim.bc.replace(face, cond)
            except ValueError as exc:
                raise SteeringRejected(proto.ERR_REJECTED, str(exc)) from None
            return 0
        if kind == "refine":
            return self._apply_refine(cmd)
        if kind == "set_cell_type":
            return self._apply_cell_type(cmd)
        if kind == "spawn_sub":
            return self._apply_spawn(cmd)
        raise SteeringRejected(proto.ERR_REJECTED, f"unknown steering kind {kind!r}")

    def _apply_refine(self, cmd: dict) -> int:
        sim = self.sim
        if "grid" in cmd:
            gid = int(cmd["grid"])
            if gid not in sim.forest.grids:
                raise SteeringRejected(proto.ERR_REJECTED, f"unknown grid {gid}")
            node = sim.forest.grid(gid)
            if not node.active or node.level >= sim.forest.max_depth:
                raise SteeringRejected(
                    proto.ERR_REJECTED,
                    f"grid {gid} cannot be refined (active={node.active}, "
                    f"level={node.level}, max={sim.forest.max_depth})")
            sim.forest.refine(gid)
        else:
            region = Box.from_json(cmd["region"])
            targets = [
                g.id for g in sim.forest.active_grids()
                if g.bbox.intersection(region) is not None
                and g.level < sim.forest.max_depth
            ]
            if not targets:
                raise SteeringRejected(
                    proto.ERR_REJECTED,
                    "no refinable grid intersects the region (already at "
                    "maximum depth or empty intersection)")
            for gid in targets:
                sim.forest.refine(gid)
        sim.refresh_topology()
        return 0

    def _apply_cell_type(self, cmd: dict) -> int:
        region = Box.from_json(cmd["region"])
        solid = {"solid": True, "fluid": False}.get(cmd.get("cell_type"))
        if solid is None:
            raise SteeringRejected(proto.ERR_REJECTED,
                                   "cell_type must be solid or fluid")
        touched = 0
        for g in self.sim.forest.active_grids():
            pts = _cell_center_points(g)
            inside = np.all(
                (pts >= np.asarray(region.lo)) & (pts <= np.asarray(region.hi)),
                axis=1).reshape(tuple(g.cells))
            if not inside.any():
                continue
            if g.solid is None:
                g.solid = np.zeros(tuple(g.cells), dtype=bool)
            g.solid[inside] = solid
            touched += int(inside.sum())
        if not touched:
            raise SteeringRejected(proto.ERR_REJECTED,
                                   "region covers no cell centres")
        return 0

    def _apply_spawn(self, cmd: dict) -> int:
        if len(self.subs) >= self.max_subs:
            raise SteeringRejected(
                proto.ERR_RESOURCE_CAP,
                f"sub-simulation cap ({self.max_subs}) reached")
        region = Box.from_json(cmd["region"])
        dom = self.sim.forest.domain
        if not dom.touches_or_overlaps(region):
            raise SteeringRejected(proto.ERR_REJECTED, "region outside the domain")
        depth = int(cmd.get("depth", 0))
        sub = SubSimulation(self._next_sub_id, self.sim, region, depth)
        self.subs[sub.id] = sub
        self._next_sub_id += 1
        return sub.id


# -- TCP collector -------------------------------------------------------------

class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: CollectorServer = self.server  # type: ignore[assignment]
        try:
            data = self.rfile.read(12)
            proto.check_handshake(data)
        except proto.ProtocolError as exc:
            self.wfile.write(proto.encode_error(exc.code, str(exc)).encode())
            return
        self.wfile.write(proto.handshake_bytes())
        self.wfile.flush()
        while True:
            try:
                frame = proto.read_frame(self.rfile)
            except EOFError:
                return
            except proto.ProtocolError as exc:
                self._send(proto.encode_error(exc.code, str(exc)))
                return
            try:
                if frame.command == proto.CMD_QUIT:
                    return
                if not self._dispatch(server, frame):
                    return
            except proto.ProtocolError as exc:
                self._send(proto.encode_error(exc.code, str(exc)))
                return
            except SteeringRejected as exc:
                self._send(proto.encode_error(exc.code, str(exc)))
            except Exception as exc:  # noqa: BLE001
                log.exception("request failed")
                self._send(proto.encode_error(proto.ERR_INTERNAL, str(exc)))
                return

    def _dispatch(self, server: "CollectorServer", frame) -> bool:
        svc = server.service
        if frame.command == proto.CMD_VIS:
            q, sim_id = proto.decode_vis_query(frame.payload)
            try:
                batch = svc.submit_viz(q, sim_id).result(timeout=server.timeout)
            except BudgetError as exc:
                self._send(proto.encode_error(proto.ERR_BAD_QUERY, str(exc)))
                return True
            except StaleSelectionError as exc:
                self._send(proto.encode_error(proto.ERR_STALE, str(exc)))
                return True
            payload = proto.encode_cellstream(batch)
            server.export(payload)
            self._send(proto.Frame(proto.CMD_DATA, payload))
            return True
        if frame.command == proto.CMD_STEER:
            cmd = proto.decode_steer(frame.payload)
            applied_at, assigned = svc.submit_steer(cmd).result(timeout=server.timeout)
            self._send(proto.encode_ack(applied_at, assigned))
            return True
        if frame.command == proto.CMD_METRICS:
            sim_id = proto.decode_metrics_request(frame.payload)
            self._send(proto.encode_metrics_reply(svc.metrics(sim_id)))
            return True
        raise proto.ProtocolError(
            proto.ERR_UNKNOWN_COMMAND, f"unknown command byte 0x{frame.command:02x}")

    def _send(self, frame) -> None:
        data = frame.encode() if hasattr(frame, "encode") else frame
        self.wfile.write(data)
        self.wfile.flush()


class CollectorServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: SimulationService,
                 export_dir: str | None = None, timeout: float = 60.0):
        super().__init__(address, _Handler)
        self.service = service
        self.export_dir = export_dir
        self.timeout = timeout
        self._export_serial = 0
        self._export_lock = threading.Lock()
        if export_dir:
            os.makedirs(export_dir, exist_ok=True)

    def export(self, payload: bytes) -> None:
        """File-dump mode for hosts without direct client connectivity."""
        if not self.export_dir:
            return
        with self._export_lock:
            serial = self._export_serial
            self._export_serial += 1
        path = os.path.join(self.export_dir, f"stream-{serial:06d}.bin")
        with open(path, "wb") as f:
            f.write(payload)


class Server:
    """Bundles the simulation runner and the TCP collector."""

    def __init__(self, sim: Simulation, port: int = 0, host: str = "127.0.0.1",
                 export_dir: str | None = None, max_subs: int = 4):
        self.service = SimulationService(sim, max_subs=max_subs)
        self.collector = CollectorServer((host, port), self.service,
                                         export_dir=export_dir)
        self._collector_thread = threading.Thread(
            target=self.collector.serve_forever, daemon=True, name="slwn-collector")

    @property
    def port(self) -> int:
        return self.collector.server_address[1]

    def start(self) -> None:
        self.service.start()
        self._collector_thread.start()

    def stop(self) -> None:
        self.collector.shutdown()
        self.collector.server_close()
        self.service.stop()
        self.service.join(timeout=5)
