import numpy as np
import pytest

from smoothset.generate import MartingaleSchedule, fixture, generate_martingale_set
from smoothset.geometry import DyadicCube


def brute_box_mass(grid, box):
    """Independent oracle: direct summation of per-cell overlap volumes."""
    if isinstance(box, DyadicCube):
        box = box.as_box()
    m = grid.size
    total = 0.0
    los = [max(c, 0.0) for c in box.corner]
    his = [min(c + box.side, 1.0) for c in box.corner]
    if any(h <= l for l, h in zip(los, his)):
        return 0.0
    if grid.n == 1:
        for i in range(m):
            a, b = i / m, (i + 1) / m
            ov = max(min(his[0], b) - max(los[0], a), 0.0)
            total += ov * grid.cell[i]
    else:
        for i in range(m):
            a0, b0 = i / m, (i + 1) / m
            ov0 = max(min(his[0], b0) - max(los[0], a0), 0.0)
            if ov0 == 0.0:
                continue
            for j in range(m):
                a1, b1 = j / m, (j + 1) / m
                ov1 = max(min(his[1], b1) - max(los[1], a1), 0.0)
                total += ov0 * ov1 * grid.cell[i, j]
    return total


def brute_box_mass_fast(grid, box):
    """Same direct per-cell overlap summation, vectorized (no prefix sums)."""
    if isinstance(box, DyadicCube):
        box = box.as_box()
    m = grid.size
    edges = np.arange(m + 1) / m
    los = [max(c, 0.0) for c in box.corner]
    his = [min(c + box.side, 1.0) for c in box.corner]
    if any(h <= l for l, h in zip(los, his)):
        return 0.0
    ovs = [
        np.clip(np.minimum(h, edges[1:]) - np.maximum(l, edges[:-1]), 0.0, None)
        for l, h in zip(los, his)
    ]
    if grid.n == 1:
        return float(np.sum(ovs[0] * grid.cell))
    return float(ovs[0] @ grid.cell @ ovs[1])


def all_dyadic_cubes(n, max_level):
    for level in range(max_level + 1):
        m = 1 << level
        if n == 1:
            for i in range(m):
                yield DyadicCube(level, (i,))
        else:
            for i in range(m):
                for j in range(m):
                    yield DyadicCube(level, (i, j))


@pytest.fixture(scope="session")
def half_1d():
    return fixture("halfspace", 1, 3, c=0.5)


@pytest.fixture(scope="session")
def layered_1d():
    sched = MartingaleSchedule(tuple(0.35 * 0.85 ** k for k in range(1, 13)), seed=7)
    return generate_martingale_set(sched, 1, mode="layered")


@pytest.fixture(scope="session")
def layered_2d():
    sched = MartingaleSchedule(tuple(0.3 * 0.8 ** k for k in range(1, 10)), seed=7)
    return generate_martingale_set(sched, 2, mode="layered")


@pytest.fixture(scope="session")
def independent_1d():
    sched = MartingaleSchedule.default(12, seed=7)
    return generate_martingale_set(sched, 1)
