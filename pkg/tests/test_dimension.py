import numpy as np
import pytest

from smoothset.dimension import (
    box_count,
    count_cubes_meeting,
    mask_box_count,
    scaffold_box_dim,
)
from smoothset.generate import MartingaleSchedule, fixture, generate_martingale_set
from smoothset.modulus import estimate_modulus
from smoothset.scaffold import StoppingSchedule, build_generations


def test_full_fixture_band_empty():
    g = fixture("full", 1, 8)
    fit = box_count(g, (0.25, 0.75), range(2, 7))
    assert all(c == 0 for c in fit.counts)
    assert fit.slope == 0.0
    assert "empty target" in fit.flags


def test_checkerboard_degenerate_fit_flagged():
    g = fixture("checkerboard", 1, 3, m=1)
    fit = box_count(g, (0.25, 0.75), [0, 1, 2])
    assert fit.counts == (1, 0, 0)  # only the unit cube has density 1/2
    assert "degenerate fit" in fit.flags
    assert fit.slope == 0.0


def test_full_support_slope_is_dimension():
    for n in (1, 2):
        g = fixture("full", n, 8 if n == 1 else 6)
        fit = box_count(g, (0.5, 1.0), range(1, 6))
        assert fit.slope == pytest.approx(float(n), abs=1e-12)
        assert fit.rsq == pytest.approx(1.0)
        assert fit.counts == tuple(2 ** (n * j) for j in range(1, 6))
        assert fit.monotone


def test_box_count_default_scale_window():
    g = fixture("full", 1, 9)
    fit = box_count(g, (0.5, 1.0))
    assert fit.scales[0] == 2 and fit.scales[-1] == 7  # two coarsest/finest excluded


def test_box_count_validation():
    g = fixture("full", 1, 6)
    with pytest.raises(ValueError):
        box_count(g, (0.8, 0.2))
    with pytest.raises(ValueError):
        box_count(g, (0.2, 0.8), [9])


def test_fit_deterministic(layered_1d):
    a = box_count(layered_1d, (0.25, 0.75), range(2, 9))
    b = box_count(layered_1d, (0.25, 0.75), range(2, 9))
    assert a == b


def test_count_cubes_meeting_matches_brute():
    rng = np.random.default_rng(3)
    mask = rng.random((32, 32)) < 0.05
    counts = count_cubes_meeting(mask, [1, 2, 3, 4, 5], 5)
    for j, got in zip([1, 2, 3, 4, 5], counts):
        w = 32 >> j
        brute = sum(
            1
            for a in range(1 << j)
            for b in range(1 << j)
            if mask[a * w : (a + 1) * w, b * w : (b + 1) * w].any()
        )
        assert got == brute
    # meeting counts are monotone and bounded by the child factor
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert all(b <= 4 * a for a, b in zip(counts, counts[1:]))


def test_mask_box_count_slope_of_everything():
    mask = np.ones((64,), dtype=bool)
    fit = mask_box_count(mask, 6, range(1, 6))
    assert fit.slope == pytest.approx(1.0, abs=1e-12)


@pytest.fixture(scope="module")
def shallow_scaffold():
    sched = MartingaleSchedule(tuple(0.0112 * 0.999 ** k for k in range(1, 21)), seed=5)
    grid = generate_martingale_set(sched, 1, mode="layered", phases="aligned")
    prof = estimate_modulus(grid, range(1, grid.K + 1), "dyadic")
    ssched = StoppingSchedule.derive(prof, 0.5, 1, 4, c_seq=(2.02, 2.04, 2.06, 2.08))
    return build_generations(grid, ssched, 4)


def test_scaffold_box_dim_requires_depth(shallow_scaffold):
    if shallow_scaffold.gen_count >= 3:
        pytest.skip("scaffold unexpectedly deep")
    with pytest.raises(ValueError, match="generations"):
        scaffold_box_dim(shallow_scaffold)


def test_scaffold_box_dim_shallow_opt_in(shallow_scaffold):
    rep = scaffold_box_dim(shallow_scaffold, allow_shallow=True)
    assert -1e-9 <= rep.slope <= 1.01
    assert rep.measured_p < 1.0
    # the union of the last generation is a union of intervals: counts can
    # only grow with depth
    assert rep.fit.counts[-1] >= rep.fit.counts[0]
    assert len(shallow_scaffold.generations[-1]) > 10


def test_scaffold_box_dim_degenerate_scaffold():
    g = fixture("constant", 1, 10, d=0.5)
    sched = StoppingSchedule(0.5, 1, (3.0, 4.0), (0.02, 0.02), 1)
    scaffold = build_generations(g, sched, 2)
    with pytest.raises(ValueError, match="generations"):
        scaffold_box_dim(scaffold, allow_shallow=True)
