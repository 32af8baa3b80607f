"""Generators for nontrivial test sets and canonical fixtures.

Two martingale constructions are provided:

* ``independent`` — at each cube, the children receive signed density
  increments summing to zero ((+e, -e) in random order for n=1; a random
  arrangement of (+e, +e, -e, -e) over the quadrants for n=2), with
  e = min(eps_k, d, 1-d). Zero-sum increments preserve the martingale
  identity exactly and the clamp keeps densities in [0,1]. Subtrees are
  statistically independent, so the limit object mimics an indicator
  set: adjacent-cube density gaps do NOT decay at fine scales.

* ``layered`` — the occupancy is the cell average of an explicit
  function d0 + sum_k a_k cos(2 pi 2^(k-1) x_axis + phase), one (or, for
  n=2, one per axis) oscillating layer per dyadic level. Dyadic averages
  of a fixed function always form an exact martingale, and because the
  layers are spatially smooth the measured consecutive-cube modulus
  decays with scale, which the stopping-time machinery needs.

Either way the per-level parent/child increment never exceeds the
schedule value eps_k.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np

from .grid import MassGrid, mass_granularity, quantize_masses
from .util import philox

_SIGN_PATTERNS_2D = np.array(
    [
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
        [-1, 1, 1, -1],
        [-1, 1, -1, 1],
        [-1, -1, 1, 1],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class MartingaleSchedule:
    """Per-level increment budget for a generated martingale set."""

    eps: tuple[float, ...]
    seed: int
    start_density: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.start_density < 1.0:
            raise ValueError("start density must lie in (0,1)")
        if any(e < 0.0 for e in self.eps):
            raise ValueError("increments must be nonnegative")
        if any(a < b - 1e-15 for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("increment sequence must be non-increasing")

    @property
    def levels(self) -> int:
        return len(self.eps)

    @classmethod
    def default(cls, levels: int, seed: int, start_density: float = 0.5) -> "MartingaleSchedule":
        return cls(
            tuple(min(0.4, 0.8 / sqrt(k)) for k in range(1, levels + 1)),
            seed=seed,
            start_density=start_density,
        )

    @classmethod
    def constant(cls, levels: int, value: float, seed: int, start_density: float = 0.5):
        return cls((value,) * levels, seed=seed, start_density=start_density)


_MAX_LEVELS = {1: 20, 2: 13}


def generate_martingale_set(
    sched: MartingaleSchedule, n: int, mode: str = "independent", phases: str = "random"
) -> MassGrid:
    """Deterministic martingale set at resolution 2^-levels.

    ``mode`` selects the construction (see module docstring). For the
    layered mode, ``phases`` picks the layer phases: "random" draws them
    from the seed; "aligned" sets them all to zero, which stacks every
    layer's peak on the dyadic grid -- the most oscillating variant per
    unit of modulus, the right input for deep stopping-time runs.

    The result carries generator metadata (algorithm, seed, schedule,
    undecided mass) for reproducibility.
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    K = sched.levels
    if K < 1 or K > _MAX_LEVELS[n]:
        raise ValueError(f"levels must be in [1, {_MAX_LEVELS[n]}] for n={n}")
    if mode == "independent":
        grid = _generate_independent(sched, n)
    elif mode == "layered":
        if phases not in ("random", "aligned"):
            raise ValueError(f"unknown phase rule {phases!r}")
        grid = _generate_layered(sched, n, phases)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cell = grid.cell
    undecided = float(np.count_nonzero((cell > 0.25) & (cell < 0.75))) / cell.size
    grid.meta.update(
        {
            "algorithm": f"{mode}-philox",
            "seed": sched.seed,
            "start_density": sched.start_density,
            "eps": list(sched.eps),
            "undecided_mass": undecided,
        }
    )
    return grid


def _quantize_down(x: np.ndarray | float, g: float):
    return np.floor(np.asarray(x, dtype=np.float64) / g) * g


def _generate_independent(sched: MartingaleSchedule, n: int) -> MassGrid:
    K = sched.levels
    g = mass_granularity(n, K)
    d = np.full((1,) * n, float(quantize_masses(np.array(sched.start_density), n, K)))
    for k in range(1, K + 1):
        rng = philox(sched.seed, n, k)
        eps = np.minimum(_quantize_down(sched.eps[k - 1], g), np.minimum(d, 1.0 - d))
        if n == 1:
            sign = 1.0 - 2.0 * rng.integers(0, 2, size=d.shape)
            child = np.empty(2 * d.shape[0])
            child[0::2] = d + sign * eps
            child[1::2] = d - sign * eps
        else:
            pat = _SIGN_PATTERNS_2D[rng.integers(0, 6, size=d.shape)]
            child = np.empty((2 * d.shape[0], 2 * d.shape[1]))
            child[0::2, 0::2] = d + pat[..., 0] * eps
            child[1::2, 0::2] = d + pat[..., 1] * eps
            child[0::2, 1::2] = d + pat[..., 2] * eps
            child[1::2, 1::2] = d + pat[..., 3] * eps
        d = child
    return MassGrid(d, quantize=False)


def _layer_cell_averages(freq: int, phase: float, m: int) -> np.ndarray:
    # Exact average of cos(2 pi freq x + phase) over each of the m cells.
    edges = np.arange(m + 1) / m
    anti = np.sin(2.0 * pi * freq * edges + phase) / (2.0 * pi * freq)
    return (anti[1:] - anti[:-1]) * m


def _generate_layered(sched: MartingaleSchedule, n: int, phase_rule: str = "random") -> MassGrid:
    K = sched.levels
    m = 1 << K
    d0 = sched.start_density
    amps = np.array(sched.eps, dtype=np.float64)
    total = amps.sum()
    margin = 0.98 * min(d0, 1.0 - d0)
    if total > margin:
        amps = amps * (margin / total)
    if phase_rule == "aligned":
        phases = np.zeros((K, n))
    else:
        rng = philox(sched.seed, n, 0)
        phases = rng.uniform(0.0, 2.0 * pi, size=(K, n))
    if n == 1:
        cells = np.full(m, d0)
        for k in range(1, K + 1):
            cells += amps[k - 1] * _layer_cell_averages(1 << (k - 1), phases[k - 1, 0], m)
    else:
        cells = np.full((m, m), d0)
        for k in range(1, K + 1):
            ax = amps[k - 1] / 2.0 * _layer_cell_averages(1 << (k - 1), phases[k - 1, 0], m)
            ay = amps[k - 1] / 2.0 * _layer_cell_averages(1 << (k - 1), phases[k - 1, 1], m)
            cells += ax[:, None]
            cells += ay[None, :]
    np.clip(cells, 0.0, 1.0, out=cells)
    grid = MassGrid(cells)
    # The smooth layers overshoot the per-level increment budget by a small
    # constant factor; one global rescale toward d0 restores it (increments
    # are linear in the layer amplitudes).
    scale = 1.0
    pyr = grid.density_pyramid()
    for k in range(1, K + 1):
        inc = _max_increment(pyr, k, n)
        if inc > sched.eps[k - 1] > 0.0:
            scale = min(scale, 0.999 * sched.eps[k - 1] / inc)
        elif sched.eps[k - 1] == 0.0 and inc > 0.0:
            scale = 0.0
    if scale < 1.0:
        grid = MassGrid(d0 + scale * (grid.cell - d0))
    return grid


def _max_increment(pyramid: list[np.ndarray], level: int, n: int) -> float:
    parent = pyramid[level - 1]
    child = pyramid[level]
    rep = np.repeat(parent, 2, axis=0)
    if n == 2:
        rep = np.repeat(rep, 2, axis=1)
    return float(np.abs(child - rep).max())


def max_level_increments(grid: MassGrid) -> list[float]:
    """Measured max |D(child) - D(parent)| per level 1..K."""
    pyr = grid.density_pyramid()
    return [_max_increment(pyr, k, grid.n) for k in range(1, grid.K + 1)]


# -- canonical fixtures ------------------------------------------------------


def fixture(name: str, n: int, resolution: int, **params) -> MassGrid:
    """Canonical test sets: empty, full, constant(d), halfspace(c),
    checkerboard(m)."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    m = 1 << resolution
    shape = (m,) * n
    if name == "empty":
        cell = np.zeros(shape)
    elif name == "full":
        cell = np.ones(shape)
    elif name == "constant":
        d = params["d"]
        if not 0.0 <= d <= 1.0:
            raise ValueError("constant level must lie in [0,1]")
        cell = np.full(shape, float(d))
    elif name == "halfspace":
        c = params["c"]
        if not 0.0 <= c <= 1.0:
            raise ValueError("halfspace threshold must lie in [0,1]")
        frac = np.clip(c * m - np.arange(m), 0.0, 1.0)
        cell = frac if n == 1 else np.broadcast_to(frac[:, None], shape).copy()
    elif name == "checkerboard":
        blocks = params["m"]
        if not 0 < blocks <= resolution:
            raise ValueError("block level must lie in [1, resolution]")
        bi = np.arange(m) >> (resolution - blocks)
        if n == 1:
            cell = ((bi & 1) == 0).astype(np.float64)
        else:
            cell = (((bi[:, None] + bi[None, :]) & 1) == 0).astype(np.float64)
    else:
        raise ValueError(f"unknown fixture {name!r}")
    return MassGrid(cell, meta={"fixture": name, **params})
