"""Order-preserving thread map used by the replicate loops."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "MODELROBUST_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``$MODELROBUST_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        threads = int(env) if env else 1
    return max(1, int(threads))


def chunked(n: int, size: int):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def parallel_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, possibly on a thread pool.

    Results are returned in input order, so callers that derive each
    item's randomness from its index get identical output for any thread
    count.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
