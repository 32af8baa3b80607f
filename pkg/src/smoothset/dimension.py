"""Box-counting dimension estimation.

Counts level-j dyadic cubes whose density falls in a band (the
resolution-stable stand-in for the essential boundary) or which meet a
fixed cell set, and fits log2 N against j. The slope upper-bounds
nothing and proves nothing; it is trend evidence at desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import MassGrid
from .scaffold import Scaffold

DEFAULT_BAND = (0.25, 0.75)


@dataclass(frozen=True)
class BoxCountFit:
    scales: tuple[int, ...]
    counts: tuple[int, ...]
    slope: float
    intercept: float
    rsq: float
    flags: tuple[str, ...] = ()

    @property
    def log_counts(self) -> list[float]:
        return [float(np.log2(c)) if c > 0 else float("-inf") for c in self.counts]

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.counts, self.counts[1:]))


def _fit(scales: Sequence[int], counts: Sequence[int], flags: list[str]) -> BoxCountFit:
    xs = [j for j, c in zip(scales, counts) if c > 0]
    ys = [float(np.log2(c)) for c in counts if c > 0]
    if not xs:
        flags.append("empty target")
        return BoxCountFit(tuple(scales), tuple(counts), 0.0, 0.0, 0.0, tuple(flags))
    if len(xs) < 2:
        flags.append("degenerate fit")
        return BoxCountFit(tuple(scales), tuple(counts), 0.0, ys[0], 0.0, tuple(flags))
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = np.polyval([slope, intercept], xs)
    ss_res = float(np.sum((np.asarray(ys) - pred) ** 2))
    ss_tot = float(np.sum((np.asarray(ys) - np.mean(ys)) ** 2))
    rsq = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return BoxCountFit(tuple(scales), tuple(counts), float(slope), float(intercept), rsq, tuple(flags))


def default_scales(resolution: int) -> list[int]:
    """All levels except the two coarsest and two finest (edge effects and
    resolution saturation)."""
    return list(range(2, max(resolution - 1, 3)))


def box_count(
    grid: MassGrid, band: tuple[float, float] | None = None, scales: Iterable[int] | None = None
) -> BoxCountFit:
    """Count level-j cubes whose density lies in the band and fit the
    log2 growth rate."""
    lo, hi = band if band is not None else DEFAULT_BAND
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("need 0 <= lo < hi <= 1")
    scales = sorted(set(int(j) for j in scales)) if scales is not None else default_scales(grid.K)
    if not scales or scales[-1] > grid.K:
        raise ValueError("scales must be nonempty levels <= K")
    pyr = grid.density_pyramid()
    counts = [int(np.count_nonzero((pyr[j] >= lo) & (pyr[j] <= hi))) for j in scales]
    flags: list[str] = []
    if all(c == 0 for c in counts):
        pass  # _fit flags the empty target
    elif any(b < a for a, b in zip(counts, counts[1:])):
        flags.append("nonmonotone counts")
    return _fit(scales, counts, flags)


def count_cubes_meeting(
    mask: np.ndarray, scales: Iterable[int], resolution: int
) -> list[int]:
    """Number of level-j dyadic cubes containing at least one set cell."""
    counts = []
    for j in sorted(set(int(s) for s in scales)):
        if j > resolution:
            raise ValueError("scale finer than the mask resolution")
        w = 1 << (resolution - j)
        m = mask
        if m.ndim == 1:
            hit = m.reshape(-1, w).any(axis=1)
        else:
            hit = m.reshape(m.shape[0] // w, w, m.shape[1] // w, w).any(axis=(1, 3))
        counts.append(int(np.count_nonzero(hit)))
    return counts


def mask_box_count(mask: np.ndarray, resolution: int, scales: Iterable[int] | None = None) -> BoxCountFit:
    scales = sorted(set(int(j) for j in scales)) if scales is not None else default_scales(resolution)
    counts = count_cubes_meeting(mask, scales, resolution)
    flags: list[str] = []
    return _fit(scales, counts, flags)


@dataclass(frozen=True)
class ScaffoldDimensionReport:
    fit: BoxCountFit
    measured_p: float
    measured_c: float
    bound: float | None

    @property
    def slope(self) -> float:
        return self.fit.slope


def scaffold_box_dim(
    scaffold: Scaffold, scales: Iterable[int] | None = None, allow_shallow: bool = False
) -> ScaffoldDimensionReport:
    """Box-count slope of the deepest generation's union, next to the
    dimension bound from the measured volume-ratio constants.

    Three generations are required for the slope to describe an actual
    nesting cascade; ``allow_shallow`` opts into running on a
    two-generation scaffold (one completed stopping round), which is the
    realistic depth when the stopping thresholds are driven by a
    measured envelope at feasible resolutions.
    """
    minimum = 2 if allow_shallow else 3
    if scaffold.gen_count < minimum:
        raise ValueError(f"scaffold needs at least {minimum} generations")
    mask = scaffold.union_mask(-1)
    coarsest = min(c.level for c, _ in scaffold.generations[-1])
    if scales is None:
        scales = [j for j in default_scales(scaffold.resolution) if j >= max(2, coarsest - 2)]
    fit = mask_box_count(mask, scaffold.resolution, scales)
    p = max(scaffold.per_gen_p) if scaffold.per_gen_p else float("nan")
    c = min(scaffold.per_gen_c) if scaffold.per_gen_c else float("nan")
    bound = scaffold.overall_bound()
    return ScaffoldDimensionReport(fit, p, c, bound)
