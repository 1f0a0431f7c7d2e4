"""Grid hierarchy: creation, refinement, tiling, distribution."""

import math

import numpy as np
import pytest

from slwn.geometry import Box
from slwn.hiergrid import Forest, create_root, distribute, forest_from_config

from conftest import UNIT_DOMAIN, cavity_forest, random_forest


def tiling_is_exact(forest):
    """Active bboxes tile the domain: volume sum matches and interiors are
    pairwise disjoint (brute-force all-pairs check)."""
    active = forest.active_grids()
    vol = math.fsum(g.bbox.volume() for g in active)
    if abs(vol - forest.domain.volume()) > 1e-12 * forest.domain.volume():
        return False
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            inter = a.bbox.intersection(b.bbox)
            if inter is not None:
                return False
    return True


class TestCreateRoot:
    def test_single_unit_square_grid(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        assert len(forest.roots) == 1
        g = forest.grid(forest.roots[0])
        assert g.cells == (10, 10, 1)
        assert g.active and g.level == 0
        assert g.bbox == UNIT_DOMAIN
        assert g.fields["u"].shape == (12, 12, 3)

    def test_degenerate_bbox_rejected(self):
        with pytest.raises(ValueError):
            create_root(Box((0, 0, 0), (1, 0, 1)), (1, 1, 1), (4, 4, 1))
        with pytest.raises(ValueError):
            create_root(Box((0, 0, 0), (1, 1, 1)), (1, 1, 1), (0, 4, 1))

    def test_tunnel_tiling(self):
        domain = Box((0, 0, 0), (4, 1, 1))
        forest = create_root(domain, (4, 1, 1), (10, 10, 1))
        assert len(forest.roots) == 4
        assert tiling_is_exact(forest)
        # abutting edges coincide exactly
        xs = sorted(forest.grid(r).bbox.lo[0] for r in forest.roots)
        assert xs == [0.0, 1.0, 2.0, 3.0]


class TestRefine:
    def test_quadrant_children(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        children = forest.refine(forest.roots[0], (2, 2, 1))
        assert len(children) == 4
        parent = forest.grid(forest.roots[0])
        assert not parent.active
        assert parent.fields["u"].shape == (12, 12, 3)  # arrays retained
        for c in children:
            assert c.cells == (10, 10, 1)
            assert c.active
            assert c.parent == parent.id
        assert tiling_is_exact(forest)

    def test_divisibility_violation_names_axis(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        with pytest.raises(ValueError, match="along x"):
            forest.refine(forest.roots[0], (3, 1, 1))

    def test_double_refine_rejected(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        forest.refine(forest.roots[0])
        with pytest.raises(ValueError, match="already refined"):
            forest.refine(forest.roots[0])

    def test_max_depth_enforced(self):
        forest = cavity_forest(depth=3, max_depth=3)
        leaf = forest.active_grids()[0]
        with pytest.raises(ValueError, match="maximum depth"):
            forest.refine(leaf.id)

    def test_constant_field_prolongation(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        root = forest.grid(forest.roots[0])
        root.fields["p"][...] = 7.25
        children = forest.refine(root.id)
        for c in children:
            assert np.all(c.fields.interior("p") == 7.25)

    def test_divisibility_holds_after_random_refines(self, rng):
        for seed in range(10):
            forest = random_forest(np.random.default_rng(seed))
            for g in forest.grids.values():
                if g.subdiv:
                    for a in range(3):
                        assert g.cells[a] % g.subdiv[a] == 0
            assert tiling_is_exact(forest)

    def test_version_bumped(self):
        forest = create_root(UNIT_DOMAIN, (1, 1, 1), (10, 10, 1))
        v0 = forest.version
        forest.refine(forest.roots[0])
        assert forest.version == v0 + 1


class TestDistribute:
    def _equal_forest(self, n):
        forest = Forest(UNIT_DOMAIN, (n, 1, 1), (4, 4, 1), [(2, 2, 1)])
        return forest, [forest.grid(r) for r in forest.roots]

    def test_even_split(self):
        forest, grids = self._equal_forest(4)
        ranks = [distribute(forest, grids, 2)[g.id] for g in grids]
        assert ranks == [0, 0, 1, 1]

    def test_one_each(self):
        forest, grids = self._equal_forest(4)
        ranks = [distribute(forest, grids, 4)[g.id] for g in grids]
        assert ranks == [0, 1, 2, 3]

    def test_five_grids_two_workers(self):
        forest, grids = self._equal_forest(5)
        ranks = [distribute(forest, grids, 2)[g.id] for g in grids]
        # enumerate both contiguous cuts; minimise the max load, ties resolved
        # by the closing rule (a rank closes once it reaches its share)
        loads = [g.cell_count() for g in grids]
        best = min(range(1, 5),
                   key=lambda c: (max(sum(loads[:c]), sum(loads[c:])), -c))
        assert ranks == [0] * best + [1] * (5 - best)
        assert ranks == [0, 0, 0, 1, 1]

    def test_total_function(self, rng):
        for seed in range(8):
            forest = random_forest(np.random.default_rng(100 + seed))
            grids = forest.active_grids()
            for workers in (1, 2, 3, 7):
                assignment = distribute(forest, grids, workers)
                assert sorted(assignment) == sorted(g.id for g in grids)
                assert all(0 <= r < workers for r in assignment.values())

    def test_morton_order_contiguous(self):
        forest = cavity_forest(depth=2)
        grids = forest.active_grids()
        assignment = distribute(forest, grids, 3)
        ranks = [assignment[g.id] for g in grids]  # grids come in curve order
        assert ranks == sorted(ranks)


def test_forest_from_config_roundtrip(tmp_path):
    cfg = {
        "domain": {"lo": [0, 0, 0], "hi": [1, 1, 0.1]},
        "grid": {"cells": [10, 10, 1], "level0_subdiv": [1, 1, 1],
                 "subdiv": [[2, 2, 1]], "max_depth": 3, "initial_refine": 2},
    }
    forest = forest_from_config(cfg)
    assert len(forest.active_grids()) == 16
    assert forest.max_level() == 2
    assert tiling_is_exact(forest)


def test_pseudo_2d_never_splits_z():
    forest = cavity_forest(depth=3)
    assert all(g.cells[2] == 1 for g in forest.grids.values())
    assert all((g.subdiv or (2, 2, 1))[2] == 1 for g in forest.grids.values())
