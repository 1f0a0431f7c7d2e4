"""Sliding-window selection: pick grids coarse-to-fine along the space
filling curve so the transmitted cell count never exceeds the client's
budget while resolution inside the window is maximised.

Selection works on the topology snapshot only. Starting from the
intersecting root grids, one selected grid at a time is replaced by its
intersecting children (walking candidates breadth-first by level, curve
order within a level) whenever the replacement still fits the budget.
Partially covered cells are transmitted whole and count fully against the
budget; grids whose overlap with the window has no volume contribute
nothing and are dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exchange import TopoEntry, TopologyIndex
from .geometry import AXES, Box
from .hiergrid import Forest

INSIDE = "inside"
OVERLAP = "overlap"
OUTSIDE = "outside"

QUANTITIES = {"velocity": 3, "pressure": 1, "velocity_magnitude": 1}


class StaleSelectionError(RuntimeError):
    """The forest was refined between select and extract; re-query."""


class BudgetError(ValueError):
    """Even the coarsest covering of the window exceeds the cell budget."""


@dataclass(frozen=True)
class WindowQuery:
    bbox: Box
    max_cells: int
    quantity: str = "velocity"

    def __post_init__(self) -> None:
        if self.max_cells < 1:
            raise ValueError("cell budget must be >= 1")
        if self.quantity not in QUANTITIES:
            raise ValueError(
                f"unknown quantity {self.quantity!r}, expected one of {sorted(QUANTITIES)}")

    def arity(self) -> int:
        return QUANTITIES[self.quantity]


def intersects(grid_bbox: Box, window: Box) -> str:
    """Per-axis interval overlap test; touching counts as overlap."""
    if not grid_bbox.touches_or_overlaps(window):
        return OUTSIDE
    if window.contains_box(grid_bbox):
        return INSIDE
    return OVERLAP


# window edges within this fraction of a cell width of a cell face are
# treated as lying exactly on the face
CLIP_EPS = 1e-9


def clip_cell_ranges(entry: TopoEntry, window: Box) -> tuple[tuple[int, int], ...] | None:
    """Index ranges (lo, hi exclusive) of the cells whose overlap with the
    window has positive volume, or None when there are none."""
    ranges = []
    for a in AXES:
        n = entry.cells[a]
        h = entry.bbox.extent(a) / n
        lo_w = max(window.lo[a], entry.bbox.lo[a])
        hi_w = min(window.hi[a], entry.bbox.hi[a])
        if hi_w <= lo_w:
            return None
        lo = int(math.floor((lo_w - entry.bbox.lo[a]) / h + CLIP_EPS))
        hi = int(math.ceil((hi_w - entry.bbox.lo[a]) / h - CLIP_EPS))
        lo = max(lo, 0)
        hi = min(hi, n)
        if hi <= lo:
            return None
        ranges.append((lo, hi))
    return tuple(ranges)


@dataclass(frozen=True)
class SelectionEntry:
    grid_id: int
    level: int
    ranges: tuple[tuple[int, int], ...]

    @property
    def cell_count(self) -> int:
        n = 1
        for lo, hi in self.ranges:
            n *= hi - lo
        return n


@dataclass
class Selection:
    entries: list[SelectionEntry]
    total_cells: int
    version: int
    query: WindowQuery

    def to_json(self) -> str:
        return json.dumps({
            "version": self.version,
            "total_cells": self.total_cells,
            "quantity": self.query.quantity,
            "max_cells": self.query.max_cells,
            "window": self.query.bbox.as_json(),
            "entries": [
                {"grid": e.grid_id, "level": e.level,
                 "ranges": [list(r) for r in e.ranges]}
                for e in self.entries
            ],
        }, sort_keys=True)


def select(topo: TopologyIndex, q: WindowQuery,
           sort_key=None) -> Selection:
    """Budgeted coarse-to-fine grid selection for one window query.

    `sort_key(grid_id)` orders grids along the space-filling curve; by
    default the per-level registry order of the topology index is used.
    """
    if sort_key is None:
        order = {gid: i for ids in topo.by_level.values() for i, gid in enumerate(ids)}
        sort_key = order.__getitem__

    def make_entry(gid: int) -> SelectionEntry | None:
        e = topo.entry(gid)
        ranges = clip_cell_ranges(e, q.bbox)
        if ranges is None:
            return None
        return SelectionEntry(gid, e.level, ranges)

    selected: list[SelectionEntry] = []
    total = 0
    for gid in topo.roots:
        entry = make_entry(gid)
        if entry is not None:
            selected.append(entry)
            total += entry.cell_count
    if total > q.max_cells:
        raise BudgetError(
            f"window needs {total} cells at the coarsest level, budget is {q.max_cells}")

    while True:
        selected.sort(key=lambda e: (e.level, sort_key(e.grid_id)))
        for i, cand in enumerate(selected):
            children = topo.entry(cand.grid_id).children
            if not children:
                continue
            repl = [
                ce for ce in (make_entry(c) for c in
                              sorted(children, key=sort_key))
                if ce is not None
            ]
            delta = sum(ce.cell_count for ce in repl) - cand.cell_count
            if total + delta <= q.max_cells:
                selected[i:i + 1] = repl
                total += delta
                break
        else:
            break

    selected.sort(key=lambda e: (e.level, sort_key(e.grid_id)))
    return Selection(selected, total, topo.version, q)


@dataclass
class CellBatch:
    """Extraction result: one row per cell, ready for wire encoding."""

    quantity: str
    centers: np.ndarray  # (n, 3)
    widths: np.ndarray   # (n, 3)
    levels: np.ndarray   # (n,) uint8
    values: np.ndarray   # (n, arity)
    version: int
    time: float = 0.0

    @property
    def count(self) -> int:
        return len(self.levels)


def _grid_values(grid, quantity: str, sel: tuple[slice, ...]) -> np.ndarray:
    F = grid.fields
    if quantity == "pressure":
        return F["p"][sel][..., np.newaxis].reshape(-1, 1)
    u, v, w = (F[n][sel] for n in ("u", "v", "w"))
    if quantity == "velocity_magnitude":
        return np.sqrt(u * u + v * v + w * w).reshape(-1, 1)
    return np.stack([u.ravel(), v.ravel(), w.ravel()], axis=1)


def extract(forest: Forest, selection: Selection, time: float = 0.0) -> CellBatch:
    """Gather the selected cells from the grids' stored arrays.

    Leaves hold computed values; refined grids hold the averaged data from
    the last exchange cycle, which is exactly what a coarse read-out wants.
    """
    if forest.version != selection.version:
        raise StaleSelectionError(
            f"selection made for topology version {selection.version}, "
            f"forest is at {forest.version}")
    q = selection.query
    centers, widths, levels, values = [], [], [], []
    for e in selection.entries:
        grid = forest.grid(e.grid_id)
        (i0, i1), (j0, j1), (k0, k1) = e.ranges
        sel = (slice(i0 + 1, i1 + 1), slice(j0 + 1, j1 + 1), slice(k0 + 1, k1 + 1))
        cx = grid.centers(0, i0, i1)
        cy = grid.centers(1, j0, j1)
        cz = grid.centers(2, k0, k1)
        gx, gy, gz = np.meshgrid(cx, cy, cz, indexing="ij")
        centers.append(np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1))
        n = e.cell_count
        widths.append(np.tile(np.asarray(grid.spacings()), (n, 1)))
        levels.append(np.full(n, e.level, dtype=np.uint8))
        values.append(_grid_values(grid, q.quantity, sel))
    if not centers:
        arity = q.arity()
        return CellBatch(q.quantity, np.zeros((0, 3)), np.zeros((0, 3)),
                         np.zeros(0, dtype=np.uint8), np.zeros((0, arity)),
                         selection.version, time)
    return CellBatch(
        q.quantity,
        np.concatenate(centers), np.concatenate(widths),
        np.concatenate(levels), np.concatenate(values),
        selection.version, time,
    )
