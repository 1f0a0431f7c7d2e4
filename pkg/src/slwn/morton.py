"""Morton (Z-order) keys for grid ordering.

A grid is addressed by its path: one (ix, iy, iz) child index per hierarchy
level. Per-axis indices are concatenated level by level into integer
coordinates (every level gets the same bit width, wide enough for the largest
splitting factor on that level), and the coordinates of the refined axes are
then bit-interleaved, x in the lowest bit.
"""

from __future__ import annotations

IndexTriple = tuple[int, int, int]


def active_axes(subdivs: list[IndexTriple]) -> tuple[int, ...]:
    """Axes that are split anywhere in the hierarchy; axes with n == 1 on
    every level carry no information and are left out of the key."""
    return tuple(a for a in (0, 1, 2) if any(s[a] > 1 for s in subdivs))


def _level_bits(subdiv: IndexTriple, axes: tuple[int, ...]) -> int:
    width = 0
    for a in axes:
        width = max(width, max(subdiv[a] - 1, 0).bit_length())
    return width


def interleave(coords: tuple[int, ...]) -> int:
    """Bit-interleave non-negative integers, first coordinate in bit 0."""
    ndim = len(coords)
    key = 0
    for axis, c in enumerate(coords):
        if c < 0:
            raise ValueError("coordinates must be non-negative")
        b = 0
        while c:
            key |= (c & 1) << (b * ndim + axis)
            c >>= 1
            b += 1
    return key


def deinterleave(key: int, ndim: int) -> tuple[int, ...]:
    coords = [0] * ndim
    b = 0
    while key:
        for axis in range(ndim):
            coords[axis] |= (key & 1) << b
            key >>= 1
        b += 1
    return tuple(coords)


def _validate(path: list[IndexTriple], subdivs: list[IndexTriple]) -> None:
    if len(path) != len(subdivs):
        raise ValueError(f"path depth {len(path)} != subdiv depth {len(subdivs)}")
    for lvl, (idx, sub) in enumerate(zip(path, subdivs)):
        for a in range(3):
            if not 0 <= idx[a] < sub[a]:
                raise ValueError(
                    f"child index {idx} out of range for splitting {sub} at level {lvl}"
                )


def encode(path: list[IndexTriple], subdivs: list[IndexTriple]) -> int:
    """Morton key of a grid path.

    `subdivs[l]` is the per-axis splitting that produced the level-l indices
    `path[l]` (level 0 holds the root tiling of the domain).
    """
    _validate(path, subdivs)
    axes = active_axes(subdivs)
    if not axes:
        return 0
    coords = [0] * len(axes)
    for idx, sub in zip(path, subdivs):
        bits = _level_bits(sub, axes)
        for i, a in enumerate(axes):
            coords[i] = (coords[i] << bits) | idx[a]
    return interleave(tuple(coords))


def decode(key: int, subdivs: list[IndexTriple]) -> list[IndexTriple]:
    """Inverse of :func:`encode` for the given per-level splittings."""
    axes = active_axes(subdivs)
    if not axes:
        if key != 0:
            raise ValueError("nonzero key for a hierarchy without refinement")
        return [(0, 0, 0) for _ in subdivs]
    coords = list(deinterleave(key, len(axes)))
    path: list[IndexTriple] = []
    for sub in reversed(subdivs):
        bits = _level_bits(sub, axes)
        idx = [0, 0, 0]
        for i, a in enumerate(axes):
            idx[a] = coords[i] & ((1 << bits) - 1)
            coords[i] >>= bits
        path.append(tuple(idx))
    if any(coords):
        raise ValueError("key has more bits than the hierarchy depth allows")
    path.reverse()
    _validate(path, subdivs)
    return path


def child_key(index: IndexTriple, subdiv: IndexTriple, axes: tuple[int, ...]) -> int:
    """Interleaved key of a single child index within one grid."""
    if not axes:
        return 0
    return interleave(tuple(index[a] for a in axes))


def path_sort_key(path: list[IndexTriple], subdivs: list[IndexTriple]) -> tuple[int, ...]:
    """Sort key following the space-filling curve across mixed depths.

    Per-level interleaved child keys compared lexicographically: for grids of
    equal depth this matches integer order of :func:`encode`; a coarse grid
    sorts directly before its own descendants.
    """
    axes = active_axes(subdivs)
    return tuple(child_key(idx, sub, axes) for idx, sub in zip(path, subdivs))
