"""Process-pool helper for embarrassingly parallel ensembles.

Results are returned in submission order, so output never depends on
scheduling; seeds are derived per task, never shared.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["default_threads", "pmap"]


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def pmap(fn, items, threads: int | None = None):
    """Map fn over items with a process pool; ordered results.

    threads=1 runs in-process, which keeps tracebacks simple and lets the
    numba kernels reuse the already-compiled dispatcher.
    """
    items = list(items)
    if threads is None:
        threads = default_threads()
    threads = min(threads, len(items)) or 1
    if threads == 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=1))
