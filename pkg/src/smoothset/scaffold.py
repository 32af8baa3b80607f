"""Stopping-time families and the nested Cantor scaffold.

A stopping family descends breadth-first from a parent cube and freezes
every maximal dyadic cube whose density has drifted at least eps from the
parent's. The scaffold iterates this in two half-steps per generation
(drift away from the target density, then recross toward it), tracking
the measured volume-ratio constants that feed the dimension lower bound
n * (1 - log_P C).

Any finite resolution truncates the ideal construction: cells that reach
level K without stopping are carried explicitly as undecided volume, and
every bound below is reported in "minus undecided" form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import log2
from typing import Sequence

import numpy as np

from .geometry import AxisBox, DyadicCube
from .grid import MassGrid
from .modulus import ModulusProfile


@dataclass(frozen=True)
class StoppedFamily:
    """Maximal dyadic subcubes at which |D - D(parent)| first reached eps."""

    parent: DyadicCube
    parent_density: float
    eps: float
    plus: tuple[tuple[DyadicCube, float], ...]
    minus: tuple[tuple[DyadicCube, float], ...]
    undecided_volume: float
    undecided_mass: float
    undecided_cells: int

    @property
    def members(self) -> tuple[tuple[DyadicCube, float], ...]:
        return self.plus + self.minus

    @property
    def plus_volume(self) -> float:
        return sum(c.volume for c, _ in self.plus)

    @property
    def minus_volume(self) -> float:
        return sum(c.volume for c, _ in self.minus)

    def partition_identity_residual(self) -> float:
        """sum (D(Q_k) - D(Q)) |Q_k| over stopped cubes plus the undecided
        term; zero for an exact partition."""
        acc = sum((d - self.parent_density) * c.volume for c, d in self.members)
        acc += self.undecided_mass - self.parent_density * self.undecided_volume
        return float(acc)


def stop_family(
    grid: MassGrid,
    parent: DyadicCube,
    eps: float,
    omega: ModulusProfile | float | None = None,
    enforce_window: bool = True,
) -> StoppedFamily:
    """Stopping-time descent below ``parent`` with threshold ``eps``.

    The admissible window n*omega(l(parent)) < eps < min(D, 1-D) is
    enforced when a measured modulus is supplied (the drift bounds are
    meaningless outside it); pass enforce_window=False to run the raw
    descent, whose partition identity holds for any eps.
    """
    if parent.n != grid.n:
        raise ValueError("dimension mismatch")
    if parent.level >= grid.K:
        raise ValueError("parent level must be below the grid resolution")
    if eps <= 0.0:
        raise ValueError("epsilon outside admissible window: eps must be positive")
    pyr = grid.density_pyramid()
    d0 = float(pyr[parent.level][parent.index])
    if enforce_window:
        hi = min(d0, 1.0 - d0)
        lo = 0.0
        if omega is not None:
            w = omega.envelope_at_level(parent.level) if isinstance(omega, ModulusProfile) else float(omega)
            lo = grid.n * w
        if not lo < eps < hi:
            raise ValueError(
                f"epsilon outside admissible window ({lo:.6g}, {hi:.6g}): eps={eps:.6g}"
            )

    plus: list[tuple[DyadicCube, float]] = []
    minus: list[tuple[DyadicCube, float]] = []
    # active cube indices per axis, advanced one level at a time
    idx = np.array([parent.index], dtype=np.int64)
    for level in range(parent.level + 1, grid.K + 1):
        # children of the active cubes
        if grid.n == 1:
            base = idx * 2
            idx = np.concatenate([base, base + 1], axis=1).reshape(-1, 1)
        else:
            base = idx * 2
            offs = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)
            idx = (base[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        dens = pyr[level][tuple(idx.T)]
        gap = dens - d0
        stopped_hi = gap >= eps
        stopped_lo = -gap >= eps
        for mask, bucket in ((stopped_hi, plus), (stopped_lo, minus)):
            where = np.nonzero(mask)[0]
            for i in where:
                bucket.append((DyadicCube(level, tuple(int(v) for v in idx[i])), float(dens[i])))
        keep = ~(stopped_hi | stopped_lo)
        idx = idx[keep]
        if idx.size == 0:
            break
    if idx.size:
        cellvol = grid.cell_volume
        dens = pyr[grid.K][tuple(idx.T)]
        und_cells = idx.shape[0]
        und_vol = und_cells * cellvol
        und_mass = float(dens.sum()) * cellvol
    else:
        und_cells, und_vol, und_mass = 0, 0.0, 0.0
    return StoppedFamily(
        parent, d0, float(eps), tuple(plus), tuple(minus), und_vol, und_mass, und_cells
    )


@dataclass(frozen=True)
class StoppingBoundsReport:
    """Measured margins for the volume-shrink and two-sided-mass bounds."""

    volume_bound: float          # 2^(-eps/omega) |parent|
    max_member_volume: float
    volume_ok: bool
    plus_volume: float
    minus_volume: float
    mass_floor: float            # |parent|/4 - undecided volume
    plus_ok: bool
    minus_ok: bool
    vacuous: bool                # no cube stopped at this resolution
    omega_used: float


def check_stopping_bounds(
    fam: StoppedFamily, omega: ModulusProfile | float
) -> StoppingBoundsReport:
    """Check (a) every member volume <= 2^(-eps/omega)|parent| and
    (b) each signed family retains at least |parent|/4 minus undecided."""
    w = omega.envelope_at_level(fam.parent.level) if isinstance(omega, ModulusProfile) else float(omega)
    pvol = fam.parent.volume
    if w > 0.0:
        vbound = 2.0 ** (-fam.eps / w) * pvol
    else:
        vbound = 0.0 if fam.members else pvol
    maxvol = max((c.volume for c, _ in fam.members), default=0.0)
    floor = pvol / 4.0 - fam.undecided_volume
    sp, sm = fam.plus_volume, fam.minus_volume
    vacuous = not fam.members
    return StoppingBoundsReport(
        volume_bound=vbound,
        max_member_volume=maxvol,
        volume_ok=vacuous or maxvol <= vbound * (1.0 + 1e-12),
        plus_volume=sp,
        minus_volume=sm,
        mass_floor=floor,
        plus_ok=sp >= floor - 1e-12,
        minus_ok=sm >= floor - 1e-12,
        vacuous=vacuous,
        omega_used=w,
    )


def dimension_lower_bound(p_ratio: float, c_ratio: float, n: int) -> float:
    """n * (1 - log_P C) for nested families with per-step volume ratio at
    most P and retained volume fraction at least C, 0 < P < C < 1."""
    if not 0.0 < p_ratio < c_ratio < 1.0:
        raise ValueError("need 0 < P < C < 1")
    return n * (1.0 - log2(c_ratio) / log2(p_ratio))


@dataclass(frozen=True)
class StoppingSchedule:
    """Target density, start level, and derived stopping thresholds."""

    alpha: float
    k0: int
    c_seq: tuple[float, ...]
    eps_seq: tuple[float, ...]
    n: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0,1)")
        if any(b <= a for a, b in zip(self.c_seq, self.c_seq[1:])):
            raise ValueError("c sequence must be strictly increasing")
        if any(c < 2 * self.n for c in self.c_seq):
            raise ValueError("c_k >= 2n required")

    @classmethod
    def derive(
        cls,
        profile: ModulusProfile,
        alpha: float,
        n: int,
        max_gen: int,
        c_seq: Sequence[float] | None = None,
        k0: int | None = None,
    ) -> "StoppingSchedule":
        """Choose the start level from the measured envelope and derive
        eps_k = c_k * omega(2^-(k+k0)).

        The start level is the smallest with envelope below
        min(alpha, 1-alpha)/20, nudged deeper if needed until every eps_k
        clears min(alpha, 1-alpha)/10.
        """
        m = min(alpha, 1.0 - alpha)
        if c_seq is None:
            c_seq = tuple(2 * n + k for k in range(1, max_gen + 1))
        else:
            c_seq = tuple(float(c) for c in c_seq)
        if len(c_seq) < max_gen:
            raise ValueError("c sequence shorter than max_gen")
        levels = profile.levels
        candidates = [j for j in levels if profile.envelope_at_level(j) < m / 20.0]
        if k0 is None:
            if not candidates:
                raise ValueError(
                    "no start level: measured modulus never drops below min(alpha,1-alpha)/20"
                )
            k0_candidates = sorted(candidates)
        else:
            k0_candidates = [k0]
        last_err = None
        for k0_try in k0_candidates:
            eps = tuple(
                c_seq[k - 1] * profile.envelope_at_level(k + k0_try)
                for k in range(1, max_gen + 1)
            )
            if all(e < m / 10.0 for e in eps) and all(e > 0.0 for e in eps):
                return cls(alpha, k0_try, c_seq[:max_gen], eps, n)
            last_err = f"eps sequence {eps} violates eps_k < {m / 10.0:.4g}"
        raise ValueError(last_err or "no admissible start level")


@dataclass
class Scaffold:
    """Nested generations with measured volume-ratio constants."""

    alpha: float
    n: int
    resolution: int
    schedule: StoppingSchedule
    generations: list[list[tuple[DyadicCube, float]]]
    per_gen_p: list[float] = field(default_factory=list)
    per_gen_c: list[float] = field(default_factory=list)
    per_gen_c_adjusted: list[float] = field(default_factory=list)
    per_gen_undecided: list[float] = field(default_factory=list)
    dim_bounds: list[float] = field(default_factory=list)
    truncated: bool = False
    no_oscillation: bool = False
    skipped_windows: int = 0

    @property
    def gen_count(self) -> int:
        return len(self.generations)

    def overall_bound(self) -> float | None:
        """Dimension bound from the worst measured constants, when valid."""
        if not self.per_gen_p:
            return None
        p, c = max(self.per_gen_p), min(self.per_gen_c)
        if not 0.0 < p < c < 1.0:
            return None
        return dimension_lower_bound(p, c, self.n)

    def union_mask(self, gen: int = -1) -> np.ndarray:
        """Indicator of the generation's union on the resolution cells."""
        m = 1 << self.resolution
        mask = np.zeros((m,) * self.n, dtype=bool)
        for cube, _ in self.generations[gen]:
            w = 1 << (self.resolution - cube.level)
            sl = tuple(slice(i * w, (i + 1) * w) for i in cube.index)
            mask[sl] = True
        return mask

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n": self.n,
            "resolution": self.resolution,
            "k0": self.schedule.k0,
            "cSeq": list(self.schedule.c_seq),
            "epsSeq": list(self.schedule.eps_seq),
            "generations": [
                [
                    {"level": c.level, "index": list(c.index), "density": d}
                    for c, d in gen
                ]
                for gen in self.generations
            ],
            "perGenP": self.per_gen_p,
            "perGenC": self.per_gen_c,
            "perGenCAdjusted": self.per_gen_c_adjusted,
            "undecided": self.per_gen_undecided,
            "dimBound": self.dim_bounds,
            "truncated": self.truncated,
            "noOscillation": self.no_oscillation,
        }


def find_seed_cube(
    grid: MassGrid, alpha: float, eps1: float, k0: int
) -> tuple[DyadicCube, float] | None:
    """First dyadic cube (breadth-first, lexicographic) at level >= k0+1
    with |D - alpha| < eps1/2."""
    pyr = grid.density_pyramid()
    for level in range(k0 + 1, grid.K + 1):
        gaps = np.abs(pyr[level] - alpha)
        hits = np.nonzero(gaps < eps1 / 2.0)
        if hits[0].size:
            idx = tuple(int(h[0]) for h in hits)
            return DyadicCube(level, idx), float(pyr[level][idx])
    return None


def build_generations(
    grid: MassGrid, schedule: StoppingSchedule, max_gen: int
) -> Scaffold:
    """Run the two-step generation recursion.

    Every generation-k cube Q spawns the family of maximal subcubes that
    drift eps_k away from D(Q); each such cube R then contributes its
    recrossing family (toward alpha, threshold |D(R) - alpha|). Members
    always satisfy |D - alpha| < eps_{k+1}/2 by maximality.
    """
    alpha = schedule.alpha
    scaffold = Scaffold(alpha, grid.n, grid.K, schedule, [])
    seed = find_seed_cube(grid, alpha, schedule.eps_seq[0], schedule.k0)
    if seed is None:
        raise ValueError("set too trivial at this resolution: no seed cube found")
    scaffold.generations.append([seed])
    for k in range(1, max_gen):
        if k > len(schedule.eps_seq):
            break
        eps_k = schedule.eps_seq[k - 1]
        nextgen: list[tuple[DyadicCube, float]] = []
        ratios_p: list[float] = []
        ratios_c: list[float] = []
        ratios_c_adj: list[float] = []
        undecided = 0.0
        any_stop = False
        for q, dq in scaffold.generations[-1]:
            if q.level >= grid.K:
                scaffold.truncated = True
                continue
            fam = stop_family(grid, q, eps_k, enforce_window=False)
            undecided += fam.undecided_volume
            retained = 0.0
            if fam.members:
                any_stop = True
            for r, dr in fam.members:
                if r.level >= grid.K:
                    scaffold.truncated = True
                    continue
                eps2 = abs(dr - alpha)
                lo = grid.n * _local_envelope(schedule, r.level)
                if not lo < eps2 < min(dr, 1.0 - dr):
                    scaffold.skipped_windows += 1
                    continue
                fam2 = stop_family(grid, r, eps2, enforce_window=False)
                undecided += fam2.undecided_volume
                # recross toward alpha: the low side if R overshot, else the
                # high side; exact ties take the high side
                toward = fam2.minus if dr > alpha else fam2.plus
                for member in toward:
                    nextgen.append(member)
                    retained += member[0].volume
                    ratios_p.append(member[0].volume / q.volume)
            ratios_c.append(retained / q.volume)
            ratios_c_adj.append((retained + fam.undecided_volume) / q.volume)
        if not nextgen:
            if not any_stop:
                scaffold.no_oscillation = True
            scaffold.truncated = True
            break
        nextgen.sort(key=lambda cd: (cd[0].level, cd[0].index))
        scaffold.generations.append(nextgen)
        scaffold.per_gen_p.append(max(ratios_p))
        scaffold.per_gen_c.append(min(ratios_c))
        scaffold.per_gen_c_adjusted.append(min(ratios_c_adj))
        scaffold.per_gen_undecided.append(undecided)
        p, c = scaffold.per_gen_p[-1], scaffold.per_gen_c[-1]
        scaffold.dim_bounds.append(
            dimension_lower_bound(p, c, grid.n) if 0.0 < p < c < 1.0 else float("nan")
        )
    if scaffold.gen_count == 1 and not scaffold.no_oscillation:
        fam = stop_family(
            grid, scaffold.generations[0][0][0], schedule.eps_seq[0], enforce_window=False
        )
        scaffold.no_oscillation = not fam.members
    return scaffold


def _local_envelope(schedule: StoppingSchedule, level: int) -> float:
    # eps_k / c_k reconstructs the envelope at level k+k0; use the finest
    # scheduled level at or above the query as an upper-bound proxy
    best = None
    for k in range(1, len(schedule.eps_seq) + 1):
        if schedule.k0 + k <= level:
            best = schedule.eps_seq[k - 1] / schedule.c_seq[k - 1]
    if best is None:
        best = schedule.eps_seq[0] / schedule.c_seq[0]
    return best


def intermediate_density_excursions(
    grid: MassGrid, scaffold: Scaffold
) -> list[tuple[int, float, float]]:
    """Per generation step: the largest |D - alpha| over all dyadic cubes
    between a member and its previous-generation ancestor, with its 6*eps_k
    ceiling. Walking the ancestor chain touches every intermediate cube."""
    pyr = grid.density_pyramid()
    alpha = scaffold.alpha
    out = []
    for k in range(1, scaffold.gen_count):
        eps_k = scaffold.schedule.eps_seq[k - 1]
        prev = {c for c, _ in scaffold.generations[k - 1]}
        worst = 0.0
        for cube, dens in scaffold.generations[k]:
            worst = max(worst, abs(dens - alpha))
            anc = cube
            while anc.level > 0:
                anc = anc.parent()
                gap = abs(float(pyr[anc.level][anc.index]) - alpha)
                worst = max(worst, gap)
                if anc in prev:
                    break
        out.append((k, worst, 6.0 * eps_k))
    return out


@dataclass(frozen=True)
class LevelSetEstimate:
    """Cells whose dyadic density trajectory stays within tau of alpha
    from the settling level onward."""

    alpha: float
    tau: float
    settle_level: int
    mask: np.ndarray
    member_volume: float

    @property
    def member_count(self) -> int:
        return int(np.count_nonzero(self.mask))


def estimate_density_level_set(
    grid: MassGrid, alpha: float, tau: float, settle_level: int
) -> LevelSetEstimate:
    """Classify every resolution cell by whether D(Q_k(x)) stays in
    [alpha-tau, alpha+tau] for all levels k in [settle_level, K]."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0,1)")
    if not 0 <= settle_level <= grid.K:
        raise ValueError("settling level out of range")
    pyr = grid.density_pyramid()
    m = grid.size
    ok = np.ones((m,) * grid.n, dtype=bool)
    for level in range(settle_level, grid.K + 1):
        d = pyr[level]
        rep = 1 << (grid.K - level)
        within = np.abs(d - alpha) <= tau
        up = np.repeat(within, rep, axis=0)
        if grid.n == 2:
            up = np.repeat(up, rep, axis=1)
        ok &= up
    vol = float(np.count_nonzero(ok)) * grid.cell_volume
    return LevelSetEstimate(alpha, tau, settle_level, ok, vol)


@dataclass(frozen=True)
class BridgeGapRow:
    h: float
    dyadic_level: int
    gap: float
    bound: float


def check_centered_vs_dyadic(
    grid: MassGrid,
    x: Sequence[float],
    scales: Sequence[float],
    profile: ModulusProfile,
    concentric_coeff: float | None = None,
) -> list[BridgeGapRow]:
    """|D(Q(x,h)) - D(Q_k(x))| per scale with 2^-k <= h < 2^-k+1, next to
    the composite overlap-plus-concentric ceiling (3n^2 + c(n)) * omega."""
    from .transform import concentric_gap_coefficient

    rows = []
    n = grid.n
    for h in scales:
        if not 0.0 < h <= 1.0:
            raise ValueError("scale must lie in (0,1]")
        k = 0
        while 2.0 ** -(k + 1) >= h:
            k += 1
        # now 2^-k <= h < 2^-(k-1)
        centered = AxisBox.centered(x, h)
        dy = DyadicCube.containing(x, k)
        gap = abs(grid.box_density(centered) - grid.cube_density(dy))
        t = h * (2.0 ** k)
        coeff = concentric_coeff if concentric_coeff is not None else concentric_gap_coefficient(n, t)
        omega = profile.envelope_at_level(k - 1)
        rows.append(BridgeGapRow(h, k, gap, (3.0 * n * n + coeff) * omega))
    return rows
