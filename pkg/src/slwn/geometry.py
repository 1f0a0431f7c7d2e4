"""Axis-aligned boxes and face bookkeeping shared by the whole grid stack."""

from __future__ import annotations

from dataclasses import dataclass

Vec3 = tuple[float, float, float]

AXES = (0, 1, 2)
AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True, order=True)
class Face:
    """One of the six faces of a box: an axis and a side (0 = low, 1 = high)."""

    axis: int
    side: int

    @property
    def name(self) -> str:
        return AXIS_NAMES[self.axis] + "-+"[self.side]

    def opposite(self) -> "Face":
        return Face(self.axis, 1 - self.side)


FACES = tuple(Face(a, s) for a in AXES for s in (0, 1))
_FACES_BY_NAME = {f.name: f for f in FACES}


def face_from_name(name: str) -> Face:
    try:
        return _FACES_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown face {name!r}, expected one of {sorted(_FACES_BY_NAME)}") from None


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box in world units."""

    lo: Vec3
    hi: Vec3

    def __post_init__(self) -> None:
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))

    def validate_positive(self) -> "Box":
        for a in AXES:
            if not self.hi[a] > self.lo[a]:
                raise ValueError(f"box has nonpositive extent along {AXIS_NAMES[a]}: {self}")
        return self

    def extent(self, axis: int) -> float:
        return self.hi[axis] - self.lo[axis]

    def extents(self) -> Vec3:
        return (self.extent(0), self.extent(1), self.extent(2))

    def volume(self) -> float:
        return self.extent(0) * self.extent(1) * self.extent(2)

    def center(self) -> Vec3:
        return tuple(0.5 * (self.lo[a] + self.hi[a]) for a in AXES)

    def face_coord(self, face: Face) -> float:
        """Plane coordinate of one face along its axis."""
        return self.lo[face.axis] if face.side == 0 else self.hi[face.axis]

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return all(
            other.lo[a] >= self.lo[a] - tol and other.hi[a] <= self.hi[a] + tol for a in AXES
        )

    def contains_point(self, p: Vec3) -> bool:
        return all(self.lo[a] <= p[a] <= self.hi[a] for a in AXES)

    def touches_or_overlaps(self, other: "Box") -> bool:
        """Per-axis interval test with inclusive bounds (touching counts)."""
        return all(self.lo[a] <= other.hi[a] and other.lo[a] <= self.hi[a] for a in AXES)

    def intersection(self, other: "Box") -> "Box | None":
        """Intersection with positive measure on every axis, else None."""
        lo = tuple(max(self.lo[a], other.lo[a]) for a in AXES)
        hi = tuple(min(self.hi[a], other.hi[a]) for a in AXES)
        if any(hi[a] <= lo[a] for a in AXES):
            return None
        return Box(lo, hi)

    def subbox(self, index: tuple[int, int, int], counts: tuple[int, int, int]) -> "Box":
        """Tile (i,j,k) of the counts-way split of this box.

        Edge coordinates are computed from the same expression on both sides of a
        shared face, so adjacent tiles coincide exactly.
        """
        lo = []
        hi = []
        for a in AXES:
            n = counts[a]
            i = index[a]
            if not 0 <= i < n:
                raise ValueError(f"tile index {index} out of range for counts {counts}")
            lo.append(self._edge(a, i, n))
            hi.append(self._edge(a, i + 1, n))
        return Box(tuple(lo), tuple(hi))

    def _edge(self, axis: int, i: int, n: int) -> float:
        if i == 0:
            return self.lo[axis]
        if i == n:
            return self.hi[axis]
        return self.lo[axis] + self.extent(axis) * (i / n)

    def as_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        return cls(tuple(obj["lo"]), tuple(obj["hi"]))
