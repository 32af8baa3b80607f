"""Cube and box geometry on the unit cube.

Two cube notions coexist: dyadic cubes (level + integer index, exact
partitions of [0,1)^n) and arbitrary axis-parallel boxes. Everything is
half-open, so dyadic families of a fixed level tile the unit cube with
no overlaps and no gaps.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence


@dataclass(frozen=True)
class DyadicCube:
    """Half-open dyadic cube prod_i [m_i 2^-k, (m_i+1) 2^-k)."""

    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        if not isinstance(self.index, tuple):
            object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        hi = 1 << self.level
        for m in self.index:
            if not 0 <= m < hi:
                raise ValueError(f"index {self.index} outside [0, 2^{self.level})")

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def sidelength(self) -> float:
        return 2.0 ** -self.level

    @property
    def corner(self) -> tuple[float, ...]:
        s = self.sidelength
        return tuple(m * s for m in self.index)

    @property
    def center(self) -> tuple[float, ...]:
        s = self.sidelength
        return tuple((m + 0.5) * s for m in self.index)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.level * self.n)

    def as_box(self) -> "AxisBox":
        return AxisBox(self.corner, self.sidelength)

    def children(self) -> list["DyadicCube"]:
        """The 2^n level-(k+1) subcubes partitioning this cube."""
        base = tuple(2 * m for m in self.index)
        out = []
        for bits in itertools.product((0, 1), repeat=self.n):
            out.append(DyadicCube(self.level + 1, tuple(b + o for b, o in zip(base, bits))))
        return out

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise ValueError("unit cube has no parent")
        return DyadicCube(self.level - 1, tuple(m >> 1 for m in self.index))

    def ancestor(self, level: int) -> "DyadicCube":
        if not 0 <= level <= self.level:
            raise ValueError("ancestor level out of range")
        shift = self.level - level
        return DyadicCube(level, tuple(m >> shift for m in self.index))

    def contains_point(self, x: Sequence[float]) -> bool:
        s = self.sidelength
        return all(m * s <= xi < (m + 1) * s for m, xi in zip(self.index, x))

    def contains_cube(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    @classmethod
    def containing(cls, x: Sequence[float], level: int) -> "DyadicCube":
        """The unique level-k dyadic cube containing the point x in [0,1)^n."""
        hi = 1 << level
        idx = []
        for xi in x:
            if not 0.0 <= xi < 1.0:
                raise ValueError("point outside [0,1)^n")
            idx.append(min(int(xi * hi), hi - 1))
        return cls(level, tuple(idx))


@dataclass(frozen=True)
class AxisBox:
    """Half-open axis-parallel box prod_i [corner_i, corner_i + side)."""

    corner: tuple[float, ...]
    side: float

    def __post_init__(self):
        if not isinstance(self.corner, tuple):
            object.__setattr__(self, "corner", tuple(float(c) for c in self.corner))
        if not self.side > 0:
            raise ValueError("empty box")

    @property
    def n(self) -> int:
        return len(self.corner)

    @property
    def volume(self) -> float:
        return float(self.side) ** self.n

    @property
    def center(self) -> tuple[float, ...]:
        h = self.side / 2.0
        return tuple(c + h for c in self.corner)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(c + self.side for c in self.corner)

    @classmethod
    def centered(cls, x: Sequence[float], h: float) -> "AxisBox":
        """The cube of sidelength h centered at x."""
        return cls(tuple(xi - h / 2.0 for xi in x), h)

    def scaled(self, t: float) -> "AxisBox":
        """Concentric scaling: same center, sidelength t*side."""
        if t <= 0:
            raise ValueError("scale factor must be positive")
        c = self.center
        return AxisBox.centered(c, t * self.side)

    def translated(self, v: Sequence[float]) -> "AxisBox":
        return AxisBox(tuple(c + vi for c, vi in zip(self.corner, v)), self.side)

    def inside_unit(self, tol: float = 0.0) -> bool:
        return all(c >= -tol and c + self.side <= 1.0 + tol for c in self.corner)


@dataclass(frozen=True)
class ConsecutivePair:
    """Two equal boxes whose closures meet in exactly one full face."""

    first: AxisBox
    second: AxisBox
    axis: int

    def __post_init__(self):
        if self.first.side != self.second.side:
            raise ValueError("consecutive boxes must share sidelength")


def lattice_pair_positions(n: int, level: int, stride_level: int) -> tuple[int, int]:
    """Corner-index ranges for a pair sweep: (along pair axis, along others).

    Along the pair axis the first cube must fit in [0,1] and the shifted
    partner must still meet the domain; along the remaining axes the cube
    must fit entirely.
    """
    if stride_level < level:
        raise ValueError("stride must be at least as fine as the cube scale")
    npos_axis = (1 << stride_level) - (1 << (stride_level - level))
    npos_other = npos_axis + 1
    return npos_axis, npos_other


def consecutive_pairs(
    n: int, level: int, stride_level: int | None = None
) -> Iterator[ConsecutivePair]:
    """Enumerate consecutive cube pairs of sidelength 2^-level.

    Corners lie on the 2^-stride_level lattice; omitting the stride (or
    setting it equal to ``level``) restricts to the dyadic grid. The first
    cube always lies inside [0,1]^n; the partner may overhang the domain
    (density queries clip it) but never lies entirely outside.
    """
    if stride_level is None:
        stride_level = level
    s = stride_level
    side = 2.0 ** -level
    step = 2.0 ** -s
    npos_axis, npos_other = lattice_pair_positions(n, level, s)
    for axis in range(n):
        ranges = [range(npos_axis) if a == axis else range(npos_other) for a in range(n)]
        for idx in itertools.product(*ranges):
            corner = tuple(i * step for i in idx)
            first = AxisBox(corner, side)
            shift = tuple(side if a == axis else 0.0 for a in range(n))
            yield ConsecutivePair(first, first.translated(shift), axis)


def count_consecutive_pairs(n: int, level: int, stride_level: int | None = None) -> int:
    if stride_level is None:
        stride_level = level
    npos_axis, npos_other = lattice_pair_positions(n, level, stride_level)
    return n * npos_axis * npos_other ** (n - 1)
