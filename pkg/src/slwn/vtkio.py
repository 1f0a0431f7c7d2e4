"""Legacy VTK text writers for offline inspection with standard viewers."""

from __future__ import annotations

import numpy as np

from .hiergrid import GridNode
from .window import CellBatch


def _g(x) -> str:
    # shortest round-trip decimal form
    return repr(float(x))


def write_structured_points(grid: GridNode, path: str) -> None:
    """One grid's interior fields as a STRUCTURED_POINTS dataset."""
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.spacings()
    with open(path, "w", encoding="ascii") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"grid {grid.id} level {grid.level}\n")
        f.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
        f.write(f"ORIGIN {_g(grid.bbox.lo[0])} {_g(grid.bbox.lo[1])} "
                f"{_g(grid.bbox.lo[2])}\n")
        f.write(f"SPACING {_g(hx)} {_g(hy)} {_g(hz)}\n")
        f.write(f"CELL_DATA {nx * ny * nz}\n")
        f.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        _write_values(f, grid.fields.interior("p"))
        f.write("VECTORS velocity double\n")
        u = grid.fields.interior("u")
        v = grid.fields.interior("v")
        w = grid.fields.interior("w")
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    f.write(f"{_g(u[i, j, k])} {_g(v[i, j, k])} {_g(w[i, j, k])}\n")


def _write_values(f, arr: np.ndarray) -> None:
    nx, ny, nz = arr.shape
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                f.write(f"{_g(arr[i, j, k])}\n")


def write_unstructured(batch: CellBatch, path: str) -> None:
    """A cell stream as an UNSTRUCTURED_GRID of voxels with cell data."""
    n = batch.count
    lo = batch.centers - 0.5 * batch.widths
    hi = batch.centers + 0.5 * batch.widths
    with open(path, "w", encoding="ascii") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"cell stream ({batch.quantity}, {n} cells)\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {8 * n} double\n")
        # voxel point order: x fastest, then y, then z
        for c in range(n):
            for dz in (0, 1):
                for dy in (0, 1):
                    for dx in (0, 1):
                        x = lo[c, 0] if dx == 0 else hi[c, 0]
                        y = lo[c, 1] if dy == 0 else hi[c, 1]
                        z = lo[c, 2] if dz == 0 else hi[c, 2]
                        f.write(f"{_g(x)} {_g(y)} {_g(z)}\n")
        f.write(f"CELLS {n} {9 * n}\n")
        for c in range(n):
            base = 8 * c
            f.write("8 " + " ".join(str(base + i) for i in range(8)) + "\n")
        f.write(f"CELL_TYPES {n}\n")
        f.write("11\n" * n)  # VTK_VOXEL
        f.write(f"CELL_DATA {n}\n")
        f.write("SCALARS level int 1\nLOOKUP_TABLE default\n")
        for c in range(n):
            f.write(f"{int(batch.levels[c])}\n")
        if batch.values.shape[1] == 3:
            f.write(f"VECTORS {batch.quantity} double\n")
            for c in range(n):
                f.write(f"{_g(batch.values[c, 0])} {_g(batch.values[c, 1])} "
                        f"{_g(batch.values[c, 2])}\n")
        else:
            f.write(f"SCALARS {batch.quantity} double 1\nLOOKUP_TABLE default\n")
            for c in range(n):
                f.write(f"{_g(batch.values[c, 0])}\n")
