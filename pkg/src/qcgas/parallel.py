"""Counter-based random streams and an order-preserving thread map.

Every random draw is tied to a counter ``(seed, operation, n, batch)`` and
batches are reduced in index order, so results do not depend on how many
workers evaluate them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

WORKERS_ENV = "QCGAS_WORKERS"

# operation codes keep streams of different operations disjoint
OP_CANONICAL = 1
OP_DILUTE = 2
OP_SAMPLE = 3
OP_RELATIONS = 4
OP_PROPERTY = 5

T = TypeVar("T")


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def stream(seed: int, op: int, *counters: int) -> np.random.Generator:
    """Philox generator keyed by the seed, operation code and counters."""
    key = [int(seed), int(op)] + [int(c) for c in counters]
    if any(k < 0 for k in key):
        raise ValueError("seed and counters must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def ordered_map(fn: Callable[[T], object], items: Iterable[T], workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, evaluated on up to ``workers`` threads."""
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
