import numpy as np
import pytest

from slwn.geometry import Box
from slwn.hiergrid import Forest, VELOCITY, PRESSURE


UNIT_DOMAIN = Box((0.0, 0.0, 0.0), (1.0, 1.0, 0.1))


def cavity_forest(depth: int = 3, cells=(10, 10, 1), max_depth: int = 3) -> Forest:
    """The demo configuration: 10x10 cells, 2x2 splitting, fully refined."""
    forest = Forest(UNIT_DOMAIN, (1, 1, 1), cells, [(2, 2, 1)], max_depth=max_depth)
    forest.refine_uniformly(depth)
    return forest


def random_forest(rng: np.random.Generator, max_depth: int = 3,
                  max_refines: int = 6) -> Forest:
    """Random hierarchy on the unit domain with 2x2 splitting."""
    cells = rng.choice([2, 4, 6, 8, 10])
    level0 = tuple(rng.choice([1, 1, 2]) for _ in range(2)) + (1,)
    forest = Forest(UNIT_DOMAIN, level0, (int(cells), int(cells), 1),
                    [(2, 2, 1)], max_depth=max_depth)
    for _ in range(int(rng.integers(0, max_refines + 1))):
        candidates = [g.id for g in forest.active_grids() if g.level < max_depth]
        if not candidates:
            break
        forest.refine(int(rng.choice(candidates)))
    return forest


def fill_random(forest: Forest, rng: np.random.Generator,
                quantities=VELOCITY + PRESSURE) -> None:
    for g in forest.grids.values():
        for name in quantities:
            g.fields[name][...] = rng.normal(size=g.fields[name].shape)


def fill_function(forest: Forest, fn, quantities=VELOCITY + PRESSURE) -> None:
    """Evaluate fn(x, y, z) at every cell centre, ghosts included."""
    for g in forest.grids.values():
        h = g.spacings()
        coords = [
            g.bbox.lo[a] + (np.arange(-1, g.cells[a] + 1) + 0.5) * h[a]
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*coords, indexing="ij")
        for name in quantities:
            g.fields[name][...] = fn(gx, gy, gz)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
