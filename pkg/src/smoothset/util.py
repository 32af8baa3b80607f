"""Shared plumbing: keyed RNG streams and deterministic parallel sweeps."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

_MASK64 = (1 << 64) - 1
_MIX = 0x9E3779B97F4A7C15

T = TypeVar("T")
R = TypeVar("R")


def philox(seed: int, *words: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *words).

    Distinct word tuples give statistically independent streams, so
    per-cube or per-level streams can be created in any order (results
    must not depend on scheduling).
    """
    salt = 0
    for w in words:
        salt = (salt * _MIX + int(w) + 0x1B873593) & _MASK64
    key = (int(seed) & _MASK64) | (salt << 64)
    return np.random.Generator(np.random.Philox(key=key))


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("SMOOTHSET_WORKERS")
        workers = int(env) if env else 1
    return max(1, int(workers))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    """Map preserving input order; thread-parallel when workers > 1.

    Safe only for pure functions of immutable inputs; results are
    identical for any worker count.
    """
    workers = resolve_workers(workers)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
