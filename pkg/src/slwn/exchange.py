"""Inter-grid data flow: bottom-up restriction, same-level halo exchange,
top-down halo fill, plus the topology service answering adjacency queries.

One full cycle runs three strictly ordered phases. Refined grids first
average their children into their own cells (deepest levels first); then
grids that share a full face on the same level copy interior layers into
each other's ghost halo; finally every ghost face that is still empty is
filled from the overlapping parent cells, walking root to leaf so multi-level
jumps see already-consistent parents. Faces on the domain boundary are
handled by the boundary-condition callback before the horizontal phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import AXES, Box, Face, FACES
from .hiergrid import (
    EXCHANGED, Forest, GridNode, IndexTriple, PARENT, PHYSICAL, SAME_LEVEL,
    UNFILLED,
)

ADJACENCY_TOL = 1e-12


@dataclass(frozen=True)
class TopoEntry:
    id: int
    level: int
    bbox: Box
    subdiv: IndexTriple | None
    cells: IndexTriple
    parent: int | None
    children: tuple[int, ...]
    owner: int
    active: bool


class TopologyIndex:
    """Purely topological/geometrical registry of all grids.

    Holds no field data; answers neighbourhood and intersection queries for
    the exchange phases and the window selection.
    """

    def __init__(self, domain: Box, entries: dict[int, TopoEntry],
                 order: dict[int, list[int]], roots: list[int], version: int):
        self.domain = domain
        self.entries = entries
        self.by_level = order
        self.roots = roots
        self.version = version
        self.tol = ADJACENCY_TOL * max(domain.extents())

    @classmethod
    def from_forest(cls, forest: Forest) -> "TopologyIndex":
        entries = {}
        order: dict[int, list[int]] = {}
        for g in forest.grids.values():
            entries[g.id] = TopoEntry(
                id=g.id, level=g.level, bbox=g.bbox, subdiv=g.subdiv,
                cells=g.cells, parent=g.parent, children=tuple(g.children),
                owner=g.owner, active=g.active,
            )
            order.setdefault(g.level, []).append(g.id)
        for level, ids in order.items():
            ids.sort(key=forest.sort_key)
        return cls(forest.domain, entries, order, list(forest.roots), forest.version)

    def entry(self, grid_id: int) -> TopoEntry:
        try:
            return self.entries[grid_id]
        except KeyError:
            raise KeyError(f"unknown grid id {grid_id}") from None

    def find_neighbor(self, grid_id: int, face: Face) -> int | None:
        """The unique same-level grid sharing the full given face, if any."""
        e = self.entry(grid_id)
        plane = e.bbox.face_coord(face)
        opposite = face.opposite()
        for cand_id in self.by_level.get(e.level, ()):
            if cand_id == grid_id:
                continue
            c = self.entries[cand_id]
            if abs(c.bbox.face_coord(opposite) - plane) > self.tol:
                continue
            if all(
                math.isclose(c.bbox.lo[a], e.bbox.lo[a], abs_tol=self.tol)
                and math.isclose(c.bbox.hi[a], e.bbox.hi[a], abs_tol=self.tol)
                for a in AXES if a != face.axis
            ):
                return cand_id
        return None

    def is_physical_face(self, grid_id: int, face: Face) -> bool:
        e = self.entry(grid_id)
        return abs(e.bbox.face_coord(face) - self.domain.face_coord(face)) <= self.tol

    def to_json(self) -> str:
        """Debug dump: ids, levels, geometry and links, no field data."""
        out = []
        for level in sorted(self.by_level):
            for gid in self.by_level[level]:
                e = self.entries[gid]
                out.append({
                    "id": e.id, "level": e.level, "bbox": e.bbox.as_json(),
                    "cells": list(e.cells), "parent": e.parent,
                    "children": list(e.children), "owner": e.owner,
                    "active": e.active,
                })
        return json.dumps({"version": self.version, "grids": out}, indent=1)


@dataclass
class HaloMsg:
    """One face worth of halo data in flight between two grids."""

    src: int
    dst: int
    face: Face  # receiving face on dst
    relation: str  # same_level | parent_to_child | child_to_parent
    quantities: tuple[str, ...]
    payload: np.ndarray

    def __post_init__(self) -> None:
        if self.payload.size % len(self.quantities) != 0:
            raise ValueError("payload not divisible by quantity count")

    def face_cells(self) -> int:
        return self.payload.size // len(self.quantities)


def _ghost_slices(grid: GridNode, face: Face) -> tuple[slice, ...]:
    sel = [slice(1, -1)] * 3
    sel[face.axis] = slice(0, 1) if face.side == 0 else slice(-1, None)
    return tuple(sel)


def _interior_layer(grid: GridNode, face: Face) -> tuple[slice, ...]:
    sel = [slice(1, -1)] * 3
    sel[face.axis] = slice(1, 2) if face.side == 0 else slice(-2, -1)
    return tuple(sel)


def _reset_halo_state(forest: Forest) -> None:
    for g in forest.grids.values():
        g.halo_src = {f: UNFILLED for f in FACES}


def default_bc(grid: GridNode, face: Face, quantities: tuple[str, ...]) -> None:
    """Zero-gradient fallback: ghost layer mirrors the first interior layer."""
    for name in quantities:
        arr = grid.fields[name]
        arr[_ghost_slices(grid, face)] = arr[_interior_layer(grid, face)]


def apply_physical(forest: Forest, topo: TopologyIndex,
                   quantities: tuple[str, ...], bc_apply=None) -> None:
    bc_apply = bc_apply or default_bc
    for g in forest.grids.values():
        for face in FACES:
            if topo.is_physical_face(g.id, face):
                bc_apply(g, face, quantities)
                g.halo_src[face] = PHYSICAL


def restrict_up(forest: Forest, parent_id: int,
                quantities: tuple[str, ...] = EXCHANGED) -> None:
    """Average the children's interiors into the parent's cells."""
    parent = forest.grid(parent_id)
    if not parent.children:
        raise ValueError(f"grid {parent_id} has no children to restrict from")
    sub = parent.subdiv
    blocks = tuple(parent.cells[a] // sub[a] for a in AXES)
    for cid in parent.children:
        child = forest.grid(cid)
        if child.cells != parent.cells:
            raise ValueError(
                f"restriction shape mismatch: child {cid} cells {child.cells} "
                f"vs parent {parent.cells}"
            )
        ci, cj, ck = child.path[-1]
        dst = (
            slice(1 + ci * blocks[0], 1 + (ci + 1) * blocks[0]),
            slice(1 + cj * blocks[1], 1 + (cj + 1) * blocks[1]),
            slice(1 + ck * blocks[2], 1 + (ck + 1) * blocks[2]),
        )
        for name in quantities:
            fine = child.fields.interior(name)
            shaped = fine.reshape(
                blocks[0], sub[0], blocks[1], sub[1], blocks[2], sub[2]
            )
            parent.fields[name][dst] = shaped.mean(axis=(1, 3, 5))


def restrict_all(forest: Forest, quantities: tuple[str, ...] = EXCHANGED) -> None:
    refined = [g for g in forest.grids.values() if g.children]
    refined.sort(key=lambda g: -g.level)
    for g in refined:
        restrict_up(forest, g.id, quantities)


def exchange_horizontal(forest: Forest, topo: TopologyIndex,
                        quantities: tuple[str, ...] = EXCHANGED,
                        collect: bool = False) -> list[HaloMsg]:
    """Copy interior layers into the ghost halo of every same-level neighbour.

    Faces without a same-level neighbour stay untouched and keep their
    `unfilled` mark for the top-down phase.
    """
    msgs: list[HaloMsg] = []
    for level in sorted(topo.by_level):
        for gid in topo.by_level[level]:
            dst = forest.grid(gid)
            for face in FACES:
                nid = topo.find_neighbor(gid, face)
                if nid is None:
                    continue
                src = forest.grid(nid)
                take = _interior_layer(src, face.opposite())
                if collect:
                    payload = np.concatenate(
                        [src.fields[name][take].ravel() for name in quantities]
                    )
                    msgs.append(HaloMsg(src.id, dst.id, face, "same_level",
                                        quantities, payload))
                for name in quantities:
                    dst.fields[name][_ghost_slices(dst, face)] = src.fields[name][take]
                dst.halo_src[face] = SAME_LEVEL
    return msgs


def _parent_indices(child: GridNode, parent: GridNode, face: Face) -> tuple[np.ndarray, ...]:
    """Parent array indices overlapping each ghost cell of one child face."""
    idx = []
    for a in AXES:
        if a == face.axis:
            h = child.spacing(a)
            coord = np.array([
                child.bbox.lo[a] - 0.5 * h if face.side == 0
                else child.bbox.hi[a] + 0.5 * h
            ])
        else:
            coord = child.centers(a)
        hp = parent.spacing(a)
        ip = np.floor((coord - parent.bbox.lo[a]) / hp).astype(int) + 1
        idx.append(np.clip(ip, 0, parent.cells[a] + 1))
    return tuple(idx)


def fill_topdown(forest: Forest, parent_id: int,
                 quantities: tuple[str, ...] = EXCHANGED) -> None:
    """Fill the still-unfilled ghost faces of each child from the parent."""
    parent = forest.grid(parent_id)
    for cid in parent.children:
        child = forest.grid(cid)
        for face in FACES:
            if child.halo_src[face] != UNFILLED:
                continue
            gather = np.ix_(*_parent_indices(child, parent, face))
            for name in quantities:
                child.fields[name][_ghost_slices(child, face)] = parent.fields[name][gather]
            child.halo_src[face] = PARENT


class _CyclePlan:
    """Precomputed slice/gather schedule for one topology version; running a
    cycle then reduces to straight array copies."""

    __slots__ = ("version", "restrict", "physical", "horizontal", "topdown",
                 "halo_final")

    def __init__(self, forest: Forest, topo: TopologyIndex):
        self.version = topo.version
        halo_final = {g.id: {} for g in forest.grids.values()}

        refined = sorted((g for g in forest.grids.values() if g.children),
                         key=lambda g: -g.level)
        self.restrict = []
        for parent in refined:
            sub = parent.subdiv
            blocks = tuple(parent.cells[a] // sub[a] for a in AXES)
            ops = []
            for cid in parent.children:
                child = forest.grid(cid)
                ci, cj, ck = child.path[-1]
                dst = (
                    slice(1 + ci * blocks[0], 1 + (ci + 1) * blocks[0]),
                    slice(1 + cj * blocks[1], 1 + (cj + 1) * blocks[1]),
                    slice(1 + ck * blocks[2], 1 + (ck + 1) * blocks[2]),
                )
                shape = (blocks[0], sub[0], blocks[1], sub[1], blocks[2], sub[2])
                ops.append((child, dst, shape))
            self.restrict.append((parent, ops))

        self.physical = []
        self.horizontal = []
        self.topdown = []
        for level in sorted(topo.by_level):
            for gid in topo.by_level[level]:
                g = forest.grid(gid)
                for face in FACES:
                    if topo.is_physical_face(gid, face):
                        self.physical.append((g, face))
                        halo_final[gid][face] = PHYSICAL
                        continue
                    nid = topo.find_neighbor(gid, face)
                    if nid is not None:
                        src = forest.grid(nid)
                        self.horizontal.append(
                            (g, face, src, _interior_layer(src, face.opposite()),
                             _ghost_slices(g, face)))
                        halo_final[gid][face] = SAME_LEVEL
        for level in sorted(topo.by_level):
            for gid in topo.by_level[level]:
                parent = forest.grid(gid)
                for cid in parent.children:
                    child = forest.grid(cid)
                    for face in FACES:
                        if face in halo_final[cid]:
                            continue
                        gather = np.ix_(*_parent_indices(child, parent, face))
                        self.topdown.append(
                            (child, face, parent, gather, _ghost_slices(child, face)))
                        halo_final[cid][face] = PARENT
        for gid, faces in halo_final.items():
            for face in FACES:
                faces.setdefault(face, UNFILLED)
        self.halo_final = halo_final


def _cycle_plan(forest: Forest, topo: TopologyIndex) -> _CyclePlan:
    plan = getattr(forest, "_plan_cache", None)
    if plan is None or plan.version != topo.version:
        plan = _CyclePlan(forest, topo)
        forest._plan_cache = plan
    return plan


def run_exchange_cycle(forest: Forest, topo: TopologyIndex,
                       quantities: tuple[str, ...] = EXCHANGED,
                       bc_apply=None) -> None:
    """One synchronised restriction / horizontal / top-down pass."""
    if forest.version != topo.version:
        raise ValueError(
            f"topology snapshot (version {topo.version}) is stale for the "
            f"forest (version {forest.version})")
    plan = _cycle_plan(forest, topo)
    bc_apply = bc_apply or default_bc
    for parent, ops in plan.restrict:
        for child, dst, shape in ops:
            for name in quantities:
                parent.fields[name][dst] = \
                    child.fields.interior(name).reshape(shape).mean(axis=(1, 3, 5))
    for g, face in plan.physical:
        bc_apply(g, face, quantities)
    for dst, face, src, take, put in plan.horizontal:
        for name in quantities:
            dst.fields[name][put] = src.fields[name][take]
    for child, face, parent, gather, put in plan.topdown:
        for name in quantities:
            child.fields[name][put] = parent.fields[name][gather]
    for g in forest.grids.values():
        g.halo_src = dict(plan.halo_final[g.id])


def unfilled_faces(forest: Forest) -> list[tuple[int, Face]]:
    """Ghost faces of active grids that the last cycle did not cover."""
    out = []
    for g in forest.grids.values():
        if not g.active:
            continue
        for face in FACES:
            if g.halo_src.get(face, UNFILLED) == UNFILLED:
                out.append((g.id, face))
    return out
