"""Thread-pool map with deterministic, index-ordered result merging."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads: int) -> int:
    """0 means auto (cpu count); negative is rejected."""
    if threads < 0:
        raise ValueError("threads must be >= 0")
    if threads == 0:
        return os.cpu_count() or 1
    return threads


def indexed_map(fn, items, threads: int = 1) -> list:
    """Apply ``fn`` to every item, possibly on a thread pool.

    Results come back in input order, so totals assembled from them do not
    depend on scheduling.  Each call of ``fn`` must be pure with respect to
    shared state.
    """
    n_workers = resolve_threads(threads)
    items = list(items)
    if n_workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
