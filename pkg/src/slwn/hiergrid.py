"""Hierarchical non-overlapping block-structured Cartesian grids.

The domain is tiled by root blocks; any block can be split into
``n_x * n_y * n_z`` children that keep the parent's interior cell counts, so
each refinement level multiplies the resolution by the splitting factors.
Refined blocks keep their cell arrays but drop out of the computation; they
hold averaged data for coarse read-out. Every block carries a one-cell ghost
halo on all faces.
"""

from __future__ import annotations

import json

import numpy as np

from . import morton
from .geometry import AXES, AXIS_NAMES, Box, Face

VELOCITY = ("u", "v", "w")
STARRED = ("us", "vs", "ws")
PRESSURE = ("p",)
#: scratch vector for the pressure solve (search direction)
PRESSURE_SCRATCH = ("pd",)
ALL_QUANTITIES = VELOCITY + PRESSURE + STARRED + PRESSURE_SCRATCH

#: quantities moved by a default exchange cycle
EXCHANGED = VELOCITY + PRESSURE

DEFAULT_MAX_DEPTH = 7

IndexTriple = tuple[int, int, int]


class FieldSet:
    """Collocated cell-centred fields for one grid, halo included.

    Arrays have shape ``(nc_x + 2, nc_y + 2, nc_z + 2)``; index 0 and -1 are
    the ghost layer, interior cells live at ``1 .. nc``.
    """

    __slots__ = ("cells", "_arrays")

    def __init__(self, cells: IndexTriple):
        self.cells = tuple(int(c) for c in cells)
        shape = tuple(c + 2 for c in self.cells)
        self._arrays = {name: np.zeros(shape) for name in ALL_QUANTITIES}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def interior(self, name: str) -> np.ndarray:
        return self._arrays[name][1:-1, 1:-1, 1:-1]

    def names(self) -> tuple[str, ...]:
        return ALL_QUANTITIES


# how a ghost face was filled during the latest exchange cycle
UNFILLED = "unfilled"
PHYSICAL = "physical"
SAME_LEVEL = "same_level"
PARENT = "parent"


class GridNode:
    """One block of the hierarchy."""

    __slots__ = (
        "id", "level", "bbox", "cells", "subdiv", "parent", "children",
        "active", "owner", "path", "fields", "halo_src", "phys_bc", "solid",
    )

    def __init__(self, gid: int, level: int, bbox: Box, cells: IndexTriple,
                 path: list[IndexTriple], parent: int | None = None, owner: int = 0):
        self.id = gid
        self.level = level
        self.bbox = bbox
        self.cells = tuple(int(c) for c in cells)
        self.subdiv: IndexTriple | None = None  # set when refined
        self.parent = parent
        self.children: list[int] = []
        self.active = True
        self.owner = owner
        self.path = path
        self.fields = FieldSet(self.cells)
        self.halo_src: dict[Face, str] = {}
        self.phys_bc = None  # resolved by the solver's boundary application
        self.solid = None  # optional bool mask of interior cells held at rest

    def spacing(self, axis: int) -> float:
        return self.bbox.extent(axis) / self.cells[axis]

    def spacings(self) -> tuple[float, float, float]:
        return tuple(self.spacing(a) for a in AXES)

    def cell_count(self) -> int:
        nx, ny, nz = self.cells
        return nx * ny * nz

    def centers(self, axis: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Cell-centre coordinates along one axis for interior cells lo..hi."""
        if hi is None:
            hi = self.cells[axis]
        h = self.spacing(axis)
        return self.bbox.lo[axis] + (np.arange(lo, hi) + 0.5) * h

    def __repr__(self) -> str:
        return (f"GridNode(id={self.id}, level={self.level}, cells={self.cells}, "
                f"bbox=[{self.bbox.lo}..{self.bbox.hi}], active={self.active})")


class Forest:
    """The full grid hierarchy plus the bookkeeping shared by all modules."""

    def __init__(self, domain: Box, level0_subdiv: IndexTriple, cells: IndexTriple,
                 subdiv_table: list[IndexTriple], max_depth: int = DEFAULT_MAX_DEPTH):
        domain.validate_positive()
        for a in AXES:
            if cells[a] < 1:
                raise ValueError(f"cell count must be >= 1, got {cells}")
            if level0_subdiv[a] < 1:
                raise ValueError(f"root tiling must be >= 1 per axis, got {level0_subdiv}")
        self.domain = domain
        self.level0_subdiv = tuple(int(n) for n in level0_subdiv)
        self.base_cells = tuple(int(c) for c in cells)
        self.subdiv_table = [tuple(int(n) for n in s) for s in subdiv_table]
        if not self.subdiv_table:
            raise ValueError("subdivision table must have at least one entry")
        self.max_depth = int(max_depth)
        self.grids: dict[int, GridNode] = {}
        self.roots: list[int] = []
        self.version = 0
        self._next_id = 0

        nx, ny, nz = self.level0_subdiv
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    node = GridNode(
                        self._take_id(), 0,
                        domain.subbox((i, j, k), self.level0_subdiv),
                        self.base_cells, [(i, j, k)],
                    )
                    self.grids[node.id] = node
                    self.roots.append(node.id)
        self.roots.sort(key=lambda g: self.sort_key(g))

    # -- construction -----------------------------------------------------

    def _take_id(self) -> int:
        gid = self._next_id
        self._next_id += 1
        return gid

    def subdiv_for_level(self, level: int) -> IndexTriple:
        """Splitting factors used to refine a grid at `level`."""
        table = self.subdiv_table
        return table[min(level, len(table) - 1)]

    def refine(self, grid_id: int, subdiv: IndexTriple | None = None) -> list[GridNode]:
        """Split one active grid into children with the same cell counts."""
        node = self.grids[grid_id]
        if node.children:
            raise ValueError(f"grid {grid_id} is already refined")
        if node.level >= self.max_depth:
            raise ValueError(f"grid {grid_id} is at maximum depth {self.max_depth}")
        sub = tuple(int(n) for n in (subdiv or self.subdiv_for_level(node.level)))
        for a in AXES:
            if sub[a] < 1:
                raise ValueError(f"splitting factors must be >= 1, got {sub}")
            if node.cells[a] % sub[a] != 0:
                raise ValueError(
                    f"cells {node.cells[a]} not divisible by splitting {sub[a]} "
                    f"along {AXIS_NAMES[a]}"
                )
        children = []
        for k in range(sub[2]):
            for j in range(sub[1]):
                for i in range(sub[0]):
                    child = GridNode(
                        self._take_id(), node.level + 1,
                        node.bbox.subbox((i, j, k), sub),
                        node.cells, node.path + [(i, j, k)],
                        parent=node.id, owner=node.owner,
                    )
                    _prolong_constant(node, child, sub, (i, j, k))
                    self.grids[child.id] = child
                    node.children.append(child.id)
                    children.append(child)
        node.subdiv = sub
        node.active = False
        self.version += 1
        return children

    def refine_uniformly(self, depth: int) -> None:
        """Refine every leaf until the whole forest reaches `depth`."""
        while True:
            todo = [g.id for g in self.grids.values() if g.active and g.level < depth]
            if not todo:
                return
            for gid in todo:
                self.refine(gid)

    # -- lookups ----------------------------------------------------------

    def grid(self, grid_id: int) -> GridNode:
        return self.grids[grid_id]

    def active_grids(self) -> list[GridNode]:
        out = [g for g in self.grids.values() if g.active]
        out.sort(key=lambda g: (g.level, self.sort_key(g.id)))
        return out

    def grids_at_level(self, level: int) -> list[GridNode]:
        out = [g for g in self.grids.values() if g.level == level]
        out.sort(key=lambda g: self.sort_key(g.id))
        return out

    def max_level(self) -> int:
        return max(g.level for g in self.grids.values())

    def path_subdivs(self, node: GridNode) -> list[IndexTriple]:
        """Per-level splittings matching the node's path (root tiling first)."""
        return [self.level0_subdiv] + [self.subdiv_for_level(l) for l in range(node.level)]

    def morton_key(self, grid_id: int) -> int:
        node = self.grids[grid_id]
        return morton.encode(node.path, self.path_subdivs(node))

    def sort_key(self, grid_id: int) -> tuple[int, ...]:
        node = self.grids[grid_id]
        return morton.path_sort_key(node.path, self.path_subdivs(node))


def create_root(domain: Box, level0_subdiv: IndexTriple = (1, 1, 1),
                cells: IndexTriple = (10, 10, 1),
                subdiv: list[IndexTriple] | IndexTriple = (2, 2, 1),
                max_depth: int = DEFAULT_MAX_DEPTH) -> Forest:
    """Create the root-level grid set covering `domain`, all active."""
    if isinstance(subdiv[0], int):
        subdiv = [tuple(subdiv)]
    return Forest(domain, level0_subdiv, cells, list(subdiv), max_depth)


def _prolong_constant(parent: GridNode, child: GridNode, sub: IndexTriple,
                      index: IndexTriple) -> None:
    """Piecewise-constant injection of parent cell values into a child interior."""
    sel = []
    for a in AXES:
        block = parent.cells[a] // sub[a]
        sel.append(slice(1 + index[a] * block, 1 + (index[a] + 1) * block))
    for name in VELOCITY + PRESSURE:
        coarse = parent.fields[name][tuple(sel)]
        fine = coarse
        for a in AXES:
            fine = np.repeat(fine, sub[a], axis=a)
        child.fields[name][1:-1, 1:-1, 1:-1] = fine


def distribute(forest: Forest, grids: list[GridNode], workers: int) -> dict[int, int]:
    """Assign grids to worker ranks along the space-filling curve.

    Grids keep curve order; a rank closes as soon as its accumulated cell
    count reaches its share of the total, so chunk loads differ by at most
    one grid.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    ordered = sorted(grids, key=lambda g: (g.level, forest.sort_key(g.id)))
    total = sum(g.cell_count() for g in ordered)
    assignment: dict[int, int] = {}
    rank = 0
    acc = 0
    for g in ordered:
        assignment[g.id] = rank
        g.owner = rank
        acc += g.cell_count()
        if rank < workers - 1 and acc * workers >= (rank + 1) * total:
            rank += 1
    return assignment


# -- configuration -------------------------------------------------------

def forest_from_config(cfg: dict) -> Forest:
    """Build a forest from the grid section of a JSON configuration."""
    dom = cfg["domain"]
    domain = Box(tuple(dom["lo"]), tuple(dom["hi"]))
    grid = cfg.get("grid", {})
    cells = tuple(grid.get("cells", (10, 10, 1)))
    level0 = tuple(grid.get("level0_subdiv", (1, 1, 1)))
    subdiv = grid.get("subdiv", [(2, 2, 1)])
    if subdiv and isinstance(subdiv[0], int):
        subdiv = [subdiv]
    subdiv = [tuple(s) for s in subdiv]
    max_depth = int(grid.get("max_depth", DEFAULT_MAX_DEPTH))
    forest = Forest(domain, level0, cells, subdiv, max_depth)
    initial = int(grid.get("initial_refine", 0))
    if initial > max_depth:
        raise ValueError(f"initial_refine {initial} exceeds max_depth {max_depth}")
    forest.refine_uniformly(initial)
    return forest


def load_forest(path: str) -> Forest:
    with open(path, encoding="utf-8") as f:
        return forest_from_config(json.load(f))
