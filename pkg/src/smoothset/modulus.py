"""Smoothness modulus estimation over consecutive-cube pairs.

The modulus at scale t = 2^-j is the largest density gap over enumerated
consecutive pairs of sidelength-t cubes. Any finite corner lattice is a
proxy for the continuum supremum, so estimates are lower bounds and every
profile records the stride it used. The envelope (running maximum over
finer scales) matches the sup-over-sidelengths-below-t convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi
from typing import Iterable

import numpy as np

from .geometry import AxisBox, ConsecutivePair, lattice_pair_positions
from .grid import MassGrid
from .util import parallel_map, philox

DEFAULT_STRIDE_MARGIN = 4
_CHUNK_ROWS = 1 << 9


@dataclass(frozen=True)
class ModulusSample:
    level: int
    scale: float
    omega: float
    pair_count: int
    witness: ConsecutivePair | None
    stride: int = 0  # resolved corner-lattice level for this scale

    def witness_gap(self, grid: MassGrid) -> float:
        """Re-evaluate the recorded extremal pair (axis-parallel modes;
        rotated witnesses record the pre-rotation pair)."""
        if self.witness is None:
            return 0.0
        return abs(grid.box_density(self.witness.first) - grid.box_density(self.witness.second))


@dataclass(frozen=True)
class ModulusProfile:
    """Per-scale modulus samples, coarse to fine, plus the mode that made them."""

    samples: tuple[ModulusSample, ...]
    mode: str

    def __post_init__(self):
        levels = [s.level for s in self.samples]
        if levels != sorted(levels):
            object.__setattr__(
                self, "samples", tuple(sorted(self.samples, key=lambda s: s.level))
            )

    @property
    def levels(self) -> list[int]:
        return [s.level for s in self.samples]

    @property
    def omegas(self) -> list[float]:
        return [s.omega for s in self.samples]

    def envelope(self) -> list[float]:
        """sup over sidelengths <= t: running max from the fine end."""
        out = []
        acc = 0.0
        for s in reversed(self.samples):
            acc = max(acc, s.omega)
            out.append(acc)
        out.reverse()
        return out

    def envelope_at_level(self, level: int) -> float:
        """Envelope for scale 2^-level, from the finest sampled scale that
        is coarser-or-equal (an upper-bound proxy for unsampled scales)."""
        if not self.samples:
            raise ValueError("empty profile")
        env = self.envelope()
        best = None
        for i, s in enumerate(self.samples):
            if s.level <= level:
                best = i
        return env[best] if best is not None else env[0]


def _axis_pair_gaps(grid: MassGrid, level: int, stride: int, axis: int):
    """Exact density gaps over the corner lattice for one pair axis.

    Yields (gaps, first_corner_cells, shape) per row chunk; the partner
    cube is clipped at the domain edge and its density uses the clipped
    cell count.
    """
    K = grid.K
    m = grid.size
    w = 1 << (K - level)
    step = 1 << (K - stride)
    npos_axis, npos_other = lattice_pair_positions(grid.n, level, stride)
    ax_lo = np.arange(npos_axis, dtype=np.int64) * step
    if grid.n == 1:
        p = grid.prefix
        lo = ax_lo
        d1 = (p[lo + w] - p[lo]) / w
        hi2 = np.minimum(lo + 2 * w, m)
        d2 = (p[hi2] - p[lo + w]) / (hi2 - lo - w)
        yield np.abs(d1 - d2), lo[:, None], (npos_axis,)
        return
    ot_lo = np.arange(npos_other, dtype=np.int64) * step
    p = grid.prefix
    for start in range(0, npos_axis, _CHUNK_ROWS):
        a = ax_lo[start : start + _CHUNK_ROWS]
        if axis == 0:
            lo0, lo1 = a[:, None], ot_lo[None, :]
        else:
            lo0, lo1 = ot_lo[:, None], a[None, :]
        hi0, hi1 = lo0 + w, lo1 + w
        s1 = p[hi0, hi1] - p[lo0, hi1] - p[hi0, lo1] + p[lo0, lo1]
        d1 = s1 / (w * w)
        if axis == 0:
            q0, q1 = hi0, lo1
            r0, r1 = np.minimum(hi0 + w, m), hi1
        else:
            q0, q1 = lo0, hi1
            r0, r1 = hi0, np.minimum(hi1 + w, m)
        s2 = p[r0, r1] - p[q0, r1] - p[r0, q1] + p[q0, q1]
        d2 = s2 / ((r0 - q0) * (r1 - q1))
        corners = np.stack(np.broadcast_arrays(lo0, lo1), axis=-1).reshape(-1, 2)
        yield np.abs(d1 - d2).ravel(), corners, d1.shape


def _sweep_scale(grid: MassGrid, level: int, stride: int) -> ModulusSample:
    best = -1.0
    best_pair: ConsecutivePair | None = None
    count = 0
    side = 2.0 ** -level
    for axis in range(grid.n):
        for gaps, corners, _ in _axis_pair_gaps(grid, level, stride, axis):
            count += gaps.size
            i = int(np.argmax(gaps))
            if gaps.flat[i] > best:
                best = float(gaps.flat[i])
                corner = tuple(corners[i] / grid.size)
                first = AxisBox(corner, side)
                shift = tuple(side if a == axis else 0.0 for a in range(grid.n))
                best_pair = ConsecutivePair(first, first.translated(shift), axis)
    return ModulusSample(level, side, max(best, 0.0), count, best_pair, stride)


def _rotated_scale(
    grid: MassGrid, level: int, stride: int, angle: float, samples: int, seed: int,
    max_positions: int,
) -> ModulusSample:
    if grid.n != 2:
        raise ValueError("rotated mode needs n=2")
    side = 2.0 ** -level
    step = 2.0 ** -stride
    npos_axis, npos_other = lattice_pair_positions(2, level, stride)
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    rot = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
    center = np.array([0.5, 0.5])

    pairs: list[tuple[np.ndarray, np.ndarray, int, tuple]] = []
    for axis in range(2):
        na = npos_axis if axis == 0 else npos_other
        nb = npos_other if axis == 0 else npos_axis
        for i0 in range(na):
            for i1 in range(nb):
                corner = np.array([i0 * step, i1 * step])
                shift = np.array([side if axis == 0 else 0.0, side if axis == 1 else 0.0])
                pairs.append((corner, corner + shift, axis, (i0, i1)))
    # keep only pairs whose rotated squares stay inside the domain
    unit = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]) * side
    kept = []
    for corner, corner2, axis, idx in pairs:
        ok = True
        for c in (corner, corner2):
            verts = (c[None, :] + unit - center) @ rot.T + center
            if np.any(verts < 0.0) or np.any(verts > 1.0):
                ok = False
                break
        if ok:
            kept.append((corner, corner2, axis, idx))
    if len(kept) > max_positions:
        sel = np.linspace(0, len(kept) - 1, max_positions).astype(int)
        kept = [kept[i] for i in sel]
    if not kept:
        return ModulusSample(level, side, 0.0, 0, None, stride)

    mm = max(int(np.sqrt(samples)), 2)
    base = (np.stack(np.meshgrid(np.arange(mm), np.arange(mm), indexing="ij"), axis=-1)
            .reshape(-1, 2))

    def rotated_density(corner: np.ndarray) -> float:
        # streams keyed by (scale, cube lattice position): a cube shared by
        # two pairs always evaluates to the same density
        key = (int(round(corner[0] / step)), int(round(corner[1] / step)))
        rng = philox(seed, level, *key)
        jitter = rng.random((mm * mm, 2))
        pts = corner[None, :] + (base + jitter) / mm * side
        pts = (pts - center) @ rot.T + center
        return float(grid.point_masses(pts).mean())

    best = -1.0
    best_pair = None
    cache: dict[tuple, float] = {}
    for corner, corner2, axis, idx in kept:
        k1 = (int(round(corner[0] / step)), int(round(corner[1] / step)))
        k2 = (int(round(corner2[0] / step)), int(round(corner2[1] / step)))
        if k1 not in cache:
            cache[k1] = rotated_density(corner)
        if k2 not in cache:
            cache[k2] = rotated_density(corner2)
        d1, d2 = cache[k1], cache[k2]
        gap = abs(d1 - d2)
        if gap > best:
            best = gap
            first = AxisBox(tuple(corner), side)
            shift = tuple(side if a == axis else 0.0 for a in range(2))
            best_pair = ConsecutivePair(first, first.translated(shift), axis)
    return ModulusSample(level, side, max(best, 0.0), len(kept), best_pair, stride)


def default_stride(grid: MassGrid, level: int) -> int:
    return min(grid.K, level + DEFAULT_STRIDE_MARGIN)


def estimate_modulus(
    grid: MassGrid,
    scales: Iterable[int],
    mode: str = "dyadic",
    stride: int | None = None,
    angle: float | None = None,
    samples: int = 4096,
    seed: int = 0,
    max_positions: int = 512,
    workers: int | None = None,
) -> ModulusProfile:
    """Per-scale consecutive-cube modulus.

    mode "dyadic": corners on the cubes' own grid. mode "lattice": corners
    on the 2^-stride lattice (default stride min(K, j+4)). mode "rotated":
    the pair pattern rotated by ``angle`` about the domain center, with
    densities from stratified sampling.
    """
    scales = sorted(set(int(j) for j in scales))
    if not scales:
        raise ValueError("empty scale list")
    for j in scales:
        if j < 0:
            raise ValueError("scales must be nonnegative levels")
        limit = grid.K if mode == "dyadic" else grid.K - 2
        if j > limit:
            raise ValueError(f"scale {j} too fine for K={grid.K} in mode {mode}")

    if mode == "dyadic":
        fn = lambda j: _sweep_scale(grid, j, j)
        label = "dyadic"
    elif mode == "lattice":
        fn = lambda j: _sweep_scale(grid, j, stride if stride is not None else default_stride(grid, j))
        label = f"lattice(S={'auto' if stride is None else stride})"
    elif mode == "rotated":
        if angle is None:
            raise ValueError("rotated mode needs an angle")
        fn = lambda j: _rotated_scale(
            grid, j, stride if stride is not None else j, angle, samples, seed, max_positions
        )
        label = f"rotated(theta={angle:.6g})"
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ModulusProfile(tuple(parallel_map(fn, scales, workers)), label)


@dataclass(frozen=True)
class StepCheckReport:
    level: int
    measured: float
    bound: float
    passed: bool


def check_parent_child_gap(
    grid: MassGrid, level: int, profile: ModulusProfile | None = None
) -> StepCheckReport:
    """Largest one-generation density step at the given parent level,
    against n * omega(parent sidelength)."""
    if not 0 <= level < grid.K:
        raise ValueError("parent level must satisfy 0 <= level < K")
    pyr = grid.density_pyramid()
    parent = pyr[level]
    child = pyr[level + 1]
    rep = np.repeat(parent, 2, axis=0)
    if grid.n == 2:
        rep = np.repeat(rep, 2, axis=1)
    measured = float(np.abs(child - rep).max())
    if profile is None:
        profile = estimate_modulus(grid, [min(level + 1, grid.K)], mode="dyadic")
    bound = grid.n * profile.envelope_at_level(level)
    return StepCheckReport(level, measured, bound, measured <= bound + 1e-12)


@dataclass(frozen=True)
class GridComparison:
    scales: tuple[int, ...]
    profiles: dict = field(default_factory=dict)
    max_ratio: float = 0.0
    consistent: bool = True
    ratio_bound: float = 10.0

    def table(self) -> list[dict]:
        rows = []
        for i, j in enumerate(self.scales):
            row = {"level": j, "t": 2.0 ** -j}
            for name, prof in self.profiles.items():
                row[name] = prof.omegas[i]
            rows.append(row)
        return rows


def compare_grid_definitions(
    grid: MassGrid,
    scales: Iterable[int],
    stride: int | None = None,
    angles: tuple[float, ...] = (pi / 6, pi / 4),
    samples: int = 1024,
    seed: int = 0,
    max_positions: int = 256,
    ratio_bound: float = 10.0,
    workers: int | None = None,
) -> GridComparison:
    """Measure the dyadic, lattice and rotated moduli on shared scales and
    classify whether they vanish (or fail to vanish) together.

    Scales where every mode is below the quantization floor count as ratio
    one; a mode at zero while another is materially positive makes the
    comparison inconsistent.
    """
    scales = sorted(set(int(j) for j in scales))
    profiles = {
        "dyadic": estimate_modulus(grid, scales, "dyadic", workers=workers),
        "lattice": estimate_modulus(grid, scales, "lattice", stride=stride, workers=workers),
    }
    for a in angles:
        profiles[f"rotated({a:.4g})"] = estimate_modulus(
            grid, scales, "rotated", angle=a, samples=samples, seed=seed,
            max_positions=max_positions, workers=workers,
        )
    floor = 1e-9
    max_ratio = 1.0
    consistent = True
    for i in range(len(scales)):
        vals = [p.omegas[i] for p in profiles.values()]
        hi, lo = max(vals), min(vals)
        if hi <= floor:
            continue
        if lo <= floor:
            consistent = False
            max_ratio = float("inf")
            continue
        max_ratio = max(max_ratio, hi / lo)
    if max_ratio > ratio_bound:
        consistent = False
    return GridComparison(tuple(scales), profiles, max_ratio, consistent, ratio_bound)
