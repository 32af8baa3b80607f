"""Acceptance suite: one test per criterion, each printing a PASS line.

Heavy inputs are shared module-scoped fixtures. The layered generator is
used wherever a criterion exercises the stopping-time machinery or needs
a decaying modulus; the independent-increment generator provably cannot
supply either (its adjacent-cube gaps saturate near 1), which is recorded
in the project notes.
"""
import time
from math import pi

import numpy as np
import pytest

from smoothset.dimension import box_count, scaffold_box_dim
from smoothset.generate import MartingaleSchedule, fixture, generate_martingale_set
from smoothset.geometry import AxisBox, DyadicCube
from smoothset.grid import MassGrid
from smoothset.maps import compose, dilation_map, identity_map, shear_map, swap_map
from smoothset.modulus import estimate_modulus
from smoothset.scaffold import (
    StoppingSchedule,
    build_generations,
    dimension_lower_bound,
    intermediate_density_excursions,
    stop_family,
)
from smoothset.transform import (
    check_concentric_gap,
    check_dilation_gap,
    check_intersecting_gap,
    check_map_image_gaps,
    pullback_set,
    rot_decompose,
)
from smoothset.util import philox

from conftest import brute_box_mass_fast


def report(criterion, detail):
    print(f"[acceptance] {criterion}: PASS ({detail})")


# -- shared inputs -----------------------------------------------------------


@pytest.fixture(scope="module")
def smooth_1d_k14():
    sched = MartingaleSchedule(tuple(0.3 * 0.85 ** k for k in range(1, 15)), seed=7)
    return generate_martingale_set(sched, 1, mode="layered")


@pytest.fixture(scope="module")
def smooth_2d_k11():
    sched = MartingaleSchedule(tuple(0.3 * 0.8 ** k for k in range(1, 12)), seed=7)
    return generate_martingale_set(sched, 2, mode="layered")


@pytest.fixture(scope="module")
def smooth_2d_k11_profile(smooth_2d_k11):
    return estimate_modulus(smooth_2d_k11, range(3, 8), "lattice")


@pytest.fixture(scope="module")
def deep_scaffold_build():
    """maxGen=4 stopping-time build on the most oscillation-rich smooth set."""
    sched = MartingaleSchedule(tuple(0.0112 * 0.999 ** k for k in range(1, 21)), seed=5)
    grid = generate_martingale_set(sched, 1, mode="layered", phases="aligned")
    prof = estimate_modulus(grid, range(1, grid.K + 1), "dyadic")
    ssched = StoppingSchedule.derive(prof, 0.5, 1, 4, c_seq=(2.02, 2.04, 2.06, 2.08))
    scaffold = build_generations(grid, ssched, 4)
    return grid, prof, scaffold


def _random_family_runs(grid, count, seed):
    """Randomized stop_family runs: parents at levels 0..3, eps drawn inside
    (0, min(D, 1-D)); returns (family, admissible) pairs."""
    prof = estimate_modulus(grid, range(1, min(grid.K, 9)), "dyadic")
    rng = philox(seed, grid.n, 0xACC)
    runs = []
    while len(runs) < count:
        level = int(rng.integers(0, 4))
        idx = tuple(int(rng.integers(0, 1 << level)) for _ in range(grid.n))
        parent = DyadicCube(level, idx)
        d0 = grid.cube_density(parent)
        hi = min(d0, 1.0 - d0)
        if hi <= 1e-3:
            continue
        lo = grid.n * prof.envelope_at_level(level)
        eps = float(rng.uniform(hi * 0.05, hi * 0.95))
        fam = stop_family(grid, parent, eps, enforce_window=False)
        runs.append((fam, lo < eps < hi))
    return runs


@pytest.fixture(scope="module")
def family_runs(smooth_1d_k14, smooth_2d_k11):
    t0 = time.time()
    runs = _random_family_runs(smooth_1d_k14, 100, seed=1)
    runs += _random_family_runs(smooth_2d_k11, 100, seed=2)
    return runs, time.time() - t0


# -- criteria ----------------------------------------------------------------


def test_criterion_01_partition_identity(family_runs):
    runs, elapsed = family_runs
    assert len(runs) == 200
    worst = max(abs(f.partition_identity_residual()) for f, _ in runs)
    assert worst <= 1e-9
    assert elapsed < 30.0
    report("01 partition identity (200 runs)", f"max residual {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_two_sided_mass_floor(family_runs):
    runs, _ = family_runs
    admissible = [f for f, ok in runs if ok]
    assert admissible, "no admissible runs sampled"
    worst_margin = float("inf")
    for fam in admissible:
        floor = fam.parent.volume / 4.0 - fam.undecided_volume
        assert fam.plus_volume >= floor - 1e-12
        assert fam.minus_volume >= floor - 1e-12
        worst_margin = min(worst_margin, fam.plus_volume - floor, fam.minus_volume - floor)
    report(
        "02 two-sided mass floor",
        f"{len(admissible)} admissible runs, worst margin {worst_margin:.3g}",
    )


def test_criterion_03_volume_shrink_over_build(deep_scaffold_build):
    grid, prof, scaffold = deep_scaffold_build
    assert scaffold.gen_count >= 2, "stopping never fired"
    violations = 0
    members = 0
    for k in range(1, scaffold.gen_count):
        c_k = scaffold.schedule.c_seq[k - 1]
        parents = [c for c, _ in scaffold.generations[k - 1]]
        for cube, _ in scaffold.generations[k]:
            parent = next(p for p in parents if p.contains_cube(cube))
            members += 1
            if cube.volume > 2.0 ** -c_k * parent.volume * (1 + 1e-12):
                violations += 1
    assert violations == 0
    report(
        "03 member volume shrink",
        f"{members} members over {scaffold.gen_count} generations "
        f"(build truncated at resolution: {scaffold.truncated}), 0 violations",
    )


def test_criterion_04_dimension_bound_formula():
    assert dimension_lower_bound(2.0 ** -8, 0.25, 2) == 1.5
    ps = np.linspace(0.002, 0.2, 20)
    cs = np.linspace(0.25, 0.9, 20)
    for c in cs:
        vals = [dimension_lower_bound(p, c, 2) for p in ps if p < c]
        assert all(b < a for a, b in zip(vals, vals[1:]))
    for p in ps:
        vals = [dimension_lower_bound(p, c, 2) for c in cs if p < c]
        assert all(b > a for a, b in zip(vals, vals[1:]))
    report("04 dimension bound formula", "exact value and 20x20 monotone sweep")


def test_criterion_05_density_sandwich(deep_scaffold_build):
    grid, prof, scaffold = deep_scaffold_build
    t0 = time.time()
    rows = intermediate_density_excursions(grid, scaffold)
    assert rows, "no generation steps to check"
    for k, worst, ceiling in rows:
        assert worst <= ceiling + 1e-12
    elapsed = time.time() - t0
    assert elapsed < 60.0
    report(
        "05 density sandwich",
        "; ".join(f"gen {k}: {w:.4f} <= {c:.4f}" for k, w, c in rows) + f", {elapsed:.1f}s",
    )


def test_criterion_06_rotation_decomposition():
    t0 = time.time()
    for angle in (pi / 6, 0.6, pi / 4):
        dec = rot_decompose(angle, 8)
        assert abs(dec.c_ratio - 1.0 / (1.0 + np.sin(2 * angle))) <= 1e-12
        for k in range(1, 9):
            assert len(dec.families[k]) == 2 ** (k + 2)
            assert abs(dec.family_area(k) - dec.expected_family_area(k)) <= 1e-6
        hist = dec.residual_history()
        ratios = [b / a for a, b in zip(hist, hist[1:]) if a > 1e-15]
        assert max(ratios) <= dec.c_ratio + 1e-6
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report("06 rotation decomposition", f"3 angles to depth 8, {elapsed:.2f}s")


def test_criterion_07_dilation_bounds(smooth_2d_k11, smooth_2d_k11_profile):
    scales = [3, 4, 5, 6, 7]
    checked = 0
    for lam in (1.0, 1.5, 2.0, 3.0):
        rows = check_dilation_gap(
            smooth_2d_k11, lam, scales, smooth_2d_k11_profile, max_positions=24
        )
        assert rows
        for r in rows:
            assert r.gap <= r.bound + 1e-12, (lam, r)
            assert r.gap <= r.envelope_bound + 1e-12, (lam, r)
            checked += 1
    report("07 dilation bounds", f"{checked} stretched boxes, 0 violations")


def test_criterion_08_affine_gap_bounds(smooth_2d_k11, smooth_2d_k11_profile):
    scales = [3, 4, 5]
    rows = check_intersecting_gap(
        smooth_2d_k11, scales, smooth_2d_k11_profile, max_positions=200
    )
    assert rows
    for r in rows:
        assert r.measured <= r.bound + 1e-12
        assert r.measured_single_axis <= r.bound_single_axis + 1e-12
    counts = 0
    for t in (1.0, 1.25, 1.75):
        crows = check_concentric_gap(
            smooth_2d_k11, t, scales, smooth_2d_k11_profile, max_positions=36
        )
        for r in crows:
            assert r.measured <= r.bound + 1e-12, (t, r)
            counts += 1
    half = fixture("halfspace", 1, 10, c=0.5)
    half_prof = estimate_modulus(half, range(1, 8), "dyadic")
    assert all(w == 1.0 for w in half_prof.omegas)
    report(
        "08 overlap and concentric gaps",
        f"{len(rows)} overlap scales + {counts} concentric rows, halfspace omega = 1 exactly",
    )


@pytest.fixture(scope="module")
def smooth_2d_k12():
    sched = MartingaleSchedule(tuple(0.45 * 0.72 ** k for k in range(1, 13)), seed=9)
    return generate_martingale_set(sched, 2, mode="layered")


def test_criterion_09_image_gap_trends(smooth_2d_k12):
    scales = [3, 4, 5, 6, 7]
    shear = shear_map(0.1)
    rows = check_map_image_gaps(
        smooth_2d_k12, shear, scales, samples=4096, seed=3, max_pairs=160
    )
    by_level = {r.level: r for r in rows}
    for r in rows:
        assert r.max_volume_gap <= 1e-12  # unit determinant, analytically forced
    gap3, gap7 = by_level[3], by_level[7]
    slack = 3.0 * (gap3.stderr + gap7.stderr)
    assert gap7.max_mass_gap < gap3.max_mass_gap - slack
    comp = compose(shear_map(0.1), dilation_map(1.3, axis=0))
    crows = check_map_image_gaps(
        smooth_2d_k12, comp, scales, samples=4096, seed=4, max_pairs=160
    )
    vals = [r.max_volume_gap for r in sorted(crows, key=lambda r: r.level)]
    assert all(v <= 1e-12 for v in vals)  # constant determinant: exact zeros
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    report(
        "09 image gap trends",
        f"mass gap {gap3.max_mass_gap:.4f} @ j=3 -> {gap7.max_mass_gap:.4f} @ j=7 "
        f"(slack {slack:.4f}); volume gaps exactly 0",
    )


def test_criterion_10_dimension_trends(deep_scaffold_build):
    t0 = time.time()
    g1 = generate_martingale_set(MartingaleSchedule.default(16, seed=7), 1, mode="layered")
    fit1 = box_count(g1, (0.25, 0.75), range(4, 13))
    assert fit1.slope >= 0.9
    t1 = time.time() - t0
    assert t1 < 120.0

    t0 = time.time()
    g2 = generate_martingale_set(MartingaleSchedule.default(12, seed=7), 2, mode="layered")
    fit2 = box_count(g2, (0.25, 0.75), range(4, 11))
    assert fit2.slope >= 1.6
    t2 = time.time() - t0
    assert t2 < 120.0

    _, _, scaffold = deep_scaffold_build
    rep = scaffold_box_dim(scaffold, allow_shallow=True)
    bound = rep.bound if rep.bound is not None else 0.0
    assert rep.slope >= bound - 0.15
    report(
        "10 dimension trends",
        f"slopes {fit1.slope:.3f} (n=1) / {fit2.slope:.3f} (n=2); "
        f"scaffold slope {rep.slope:.3f} >= bound {bound:.3f} - 0.15; "
        f"{t1:.0f}s + {t2:.0f}s",
    )


def test_criterion_11_oracle_equivalence(smooth_2d_k11):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        corner = rng.uniform(0, 0.95, size=2)
        side = rng.uniform(0.01, 1.0 - corner.max())
        box = AxisBox(tuple(corner), side)
        worst = max(
            worst,
            abs(smooth_2d_k11.box_mass(box) - brute_box_mass_fast(smooth_2d_k11, box)),
        )
    assert worst <= 1e-9

    small = MassGrid(smooth_2d_k11.density_pyramid()[8])
    ident = pullback_set(small, identity_map(), small.K, samples=256)
    assert np.array_equal(ident.cell, small.cell)
    swapped = pullback_set(small, swap_map(), small.K, samples=256)
    assert np.array_equal(swapped.cell, small.cell.T)
    report(
        "11 oracle equivalence",
        f"prefix vs brute max |diff| {worst:.2e}; identity pullback exact; swap exact",
    )
