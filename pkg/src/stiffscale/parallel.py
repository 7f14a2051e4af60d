"""Thread-count plumbing.  Work is always cut into the same fixed chunks, so
results do not depend on how many workers process them."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "STIFFSCALE_THREADS"
_threads: int | None = None


def set_threads(n: int | None):
    global _threads
    _threads = None if n is None else max(1, int(n))


def get_threads() -> int:
    if _threads is not None:
        return _threads
    try:
        return max(1, int(os.environ.get(ENV_VAR, "1")))
    except ValueError:
        return 1


def chunk_bounds(n: int, chunk: int):
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(fn, n: int, chunk: int):
    """Apply fn(lo, hi) over fixed chunks of range(n); results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    workers = get_threads()
    if workers == 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
