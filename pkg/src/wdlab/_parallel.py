"""Fixed-order sharding over a thread pool.

Work is cut into shards by global sample index and results are returned in
shard order, so the output never depends on the number of threads.  The
numba kernels release the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_SHARD = 4096


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get("WDLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def shard_bounds(n: int, shard: int = DEFAULT_SHARD) -> list[tuple[int, int]]:
    return [(lo, min(lo + shard, n)) for lo in range(0, n, shard)]


def map_shards(fn, n: int, shard: int = DEFAULT_SHARD, threads: int | None = None) -> list:
    """Apply fn(lo, hi) to each shard of range(n); results in shard order."""
    bounds = shard_bounds(n, shard)
    nt = min(thread_count(threads), max(1, len(bounds)))
    if nt == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=nt) as ex:
        return list(ex.map(lambda b: fn(*b), bounds))
