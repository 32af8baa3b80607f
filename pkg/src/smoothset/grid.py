"""Finite-resolution occupancy grids with an exact region-mass engine.

A measurable set A inside [0,1]^n is stored as the fraction of each
resolution cell it occupies (uniform-within-cell model; this is the only
approximation layer). Cell fractions are quantized to the power-of-two
granularity 2^-(52 - n*K), so every partial sum of cell masses fits the
53-bit significand of a double: the inclusive prefix-sum table and all
cell-aligned region queries are exact, not merely close.

Boxes reaching past [0,1]^n are clipped and densities use the clipped
volume, which keeps the engine total.
"""
from __future__ import annotations

import struct

import numpy as np

from .geometry import AxisBox, DyadicCube

GRID_MAGIC = b"MGR1"


class GridFormatError(ValueError):
    """Raised for malformed grid files."""


def mass_granularity(n: int, resolution: int) -> float:
    """Quantization step for cell masses: keeps all partial sums exact."""
    return 2.0 ** -(52 - n * resolution)


def quantize_masses(cell: np.ndarray, n: int, resolution: int) -> np.ndarray:
    g = mass_granularity(n, resolution)
    out = np.rint(np.asarray(cell, dtype=np.float64) / g) * g
    return np.clip(out, 0.0, 1.0)


class MassGrid:
    """Fractional-occupancy grid over [0,1]^n with O(1) axis-box queries.

    Immutable after construction; all queries are pure, so instances are
    safe to share across threads.
    """

    def __init__(self, cell: np.ndarray, meta: dict | None = None, quantize: bool = True):
        cell = np.asarray(cell, dtype=np.float64)
        n = cell.ndim
        if n not in (1, 2):
            raise ValueError("only n=1 and n=2 grids are supported")
        m = cell.shape[0]
        if any(s != m for s in cell.shape):
            raise ValueError("grid must be square")
        K = m.bit_length() - 1
        if 1 << K != m:
            raise ValueError("grid side must be a power of two")
        if np.any(cell < 0.0) or np.any(cell > 1.0):
            raise ValueError("mass out of range [0,1]")
        if quantize:
            cell = quantize_masses(cell, n, K)
        cell.setflags(write=False)
        self.cell = cell
        self.n = n
        self.K = K
        self.meta = dict(meta) if meta else {}
        self._prefix: np.ndarray | None = None
        self._pyramid: list[np.ndarray] | None = None

    # -- derived tables -------------------------------------------------

    @property
    def size(self) -> int:
        return 1 << self.K

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.n * self.K)

    @property
    def prefix(self) -> np.ndarray:
        """Zero-padded inclusive prefix sums of cell masses (exact)."""
        if self._prefix is None:
            m = self.size
            if self.n == 1:
                p = np.zeros(m + 1)
                np.cumsum(self.cell, out=p[1:])
            else:
                p = np.zeros((m + 1, m + 1))
                p[1:, 1:] = self.cell.cumsum(axis=0).cumsum(axis=1)
            p.setflags(write=False)
            self._prefix = p
        return self._prefix

    def density_pyramid(self) -> list[np.ndarray]:
        """Densities of every dyadic cube, one array per level 0..K.

        Level K is the cell array itself; each coarser level averages the
        2^n children. With quantized cells all averages are exact, so the
        pyramid is a genuine dyadic martingale.
        """
        if self._pyramid is None:
            levels = [self.cell]
            d = self.cell
            for _ in range(self.K):
                if self.n == 1:
                    d = (d[0::2] + d[1::2]) / 2.0
                else:
                    d = (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2]) / 4.0
                levels.append(d)
            levels.reverse()
            for arr in levels:
                arr.setflags(write=False)
            self._pyramid = levels
        return self._pyramid

    def cube_density(self, cube: DyadicCube) -> float:
        if cube.level > self.K:
            raise ValueError("cube finer than grid resolution")
        return float(self.density_pyramid()[cube.level][cube.index])

    @property
    def total_mass(self) -> float:
        return float(self.cell.sum()) * self.cell_volume

    # -- exact rectangle sums over cells --------------------------------

    def aligned_sums(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Sum of cell masses over cell-index boxes [lo, hi); exact.

        lo, hi: integer arrays of shape (..., n) with 0 <= lo <= hi <= 2^K.
        """
        p = self.prefix
        if self.n == 1:
            return p[hi[..., 0]] - p[lo[..., 0]]
        return (
            p[hi[..., 0], hi[..., 1]]
            - p[lo[..., 0], hi[..., 1]]
            - p[hi[..., 0], lo[..., 1]]
            + p[lo[..., 0], lo[..., 1]]
        )

    # -- general axis-box queries ----------------------------------------

    def box_mass(self, box: AxisBox | DyadicCube) -> float:
        """Measure |A ∩ box|: exact on cell-aligned boxes, proportional on
        partial cells. Boxes are clipped to [0,1]^n. Rectangles (objects
        carrying a per-axis ``sides`` tuple) are supported too."""
        if isinstance(box, DyadicCube):
            box = box.as_box()
        if box.n != self.n:
            raise ValueError("dimension mismatch")
        sides = getattr(box, "sides", None) or (box.side,) * self.n
        if any(s <= 0 for s in sides):
            raise ValueError("empty box")
        m = self.size
        segs_per_axis = []
        for c, s in zip(box.corner, sides):
            a = max(c, 0.0) * m
            b = min(c + s, 1.0) * m
            if b <= a:
                return 0.0
            segs_per_axis.append(_axis_segments(a, b, m))
        total = 0.0
        if self.n == 1:
            for lo0, hi0, w0 in segs_per_axis[0]:
                total += w0 * float(self.prefix[hi0] - self.prefix[lo0])
        else:
            p = self.prefix
            for lo0, hi0, w0 in segs_per_axis[0]:
                for lo1, hi1, w1 in segs_per_axis[1]:
                    s = p[hi0, hi1] - p[lo0, hi1] - p[hi0, lo1] + p[lo0, lo1]
                    total += w0 * w1 * float(s)
        return total * self.cell_volume

    def clipped_volume(self, box: AxisBox | DyadicCube) -> float:
        if isinstance(box, DyadicCube):
            box = box.as_box()
        sides = getattr(box, "sides", None) or (box.side,) * self.n
        v = 1.0
        for c, s in zip(box.corner, sides):
            v *= max(min(c + s, 1.0) - max(c, 0.0), 0.0)
        return v

    def box_density(self, box: AxisBox | DyadicCube) -> float:
        """D(Q) = |A ∩ Q| / |Q| over the clipped box; always in [0,1]."""
        vol = self.clipped_volume(box)
        if vol <= 0.0:
            raise ValueError("box does not meet [0,1]^n")
        d = self.box_mass(box) / vol
        return min(max(d, 0.0), 1.0)

    # -- misc -------------------------------------------------------------

    def point_masses(self, pts: np.ndarray) -> np.ndarray:
        """Cell mass at each point of pts (shape (..., n)); points outside
        [0,1)^n are an error for the caller to avoid."""
        idx = np.floor(pts * self.size).astype(np.int64)
        np.clip(idx, 0, self.size - 1, out=idx)
        if self.n == 1:
            return self.cell[idx[..., 0]]
        return self.cell[idx[..., 0], idx[..., 1]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MassGrid):
            return NotImplemented
        return self.n == other.n and self.K == other.K and np.array_equal(self.cell, other.cell)

    def __repr__(self) -> str:
        return f"MassGrid(n={self.n}, K={self.K}, |A|={self.total_mass:.6g})"


def _axis_segments(a: float, b: float, m: int) -> list[tuple[int, int, float]]:
    # Decompose [a, b) (cell units, 0 <= a < b <= m) into at most three
    # (lo, hi, per-cell-weight) runs: partial edge cells plus a full-weight
    # interior run.
    ia = int(np.floor(a))
    ib = int(np.floor(b))
    if ia == ib:
        return [(ia, ia + 1, b - a)]
    segs: list[tuple[int, int, float]] = []
    full_lo = ia
    if a > ia:
        segs.append((ia, ia + 1, (ia + 1) - a))
        full_lo = ia + 1
    if ib > full_lo:
        segs.append((full_lo, ib, 1.0))
    if b > ib:
        segs.append((ib, ib + 1, b - ib))
    return segs


# -- MGR1 file format ------------------------------------------------------
#
# bytes 'M','G','R','1'; u8 n; u8 K; then 2^(n*K) little-endian float64
# cell masses, row-major with the first coordinate fastest.


def save_grid(grid: MassGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<BB", grid.n, grid.K))
        fh.write(np.asfortranarray(grid.cell).astype("<f8").tobytes(order="F"))


def load_grid(path) -> MassGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6:
        raise GridFormatError("truncated header")
    if raw[:4] != GRID_MAGIC:
        raise GridFormatError("bad magic")
    n, K = struct.unpack("<BB", raw[4:6])
    if n not in (1, 2):
        raise GridFormatError(f"unsupported dimension {n}")
    count = 1 << (n * K)
    expected = 6 + 8 * count
    if len(raw) < expected:
        raise GridFormatError("truncated payload")
    if len(raw) > expected:
        raise GridFormatError("trailing data")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=6)
    cell = flat.reshape((1 << K,) * n, order="F").astype(np.float64)
    if np.any(cell < 0.0) or np.any(cell > 1.0):
        raise GridFormatError("mass out of range")
    # masses are stored already quantized; re-quantizing is a no-op
    return MassGrid(cell, quantize=False)
