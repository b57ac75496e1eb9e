"""Path-axis chunking over a thread pool.

Chunks write disjoint slices and every per-path result depends only on the
path index, so output is identical for any thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "WICKPROP_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def chunk_bounds(n: int, n_chunks: int):
    n_chunks = max(1, min(n_chunks, n))
    edges = [round(i * n / n_chunks) for i in range(n_chunks + 1)]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def for_each_chunk(n: int, fn, threads: int | None = None):
    """Call ``fn(start, stop)`` over a partition of ``range(n)``."""
    threads = resolve_threads(threads)
    if threads == 1 or n < 2:
        fn(0, n)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, a, b) for a, b in chunk_bounds(n, 4 * threads)]:
            fut.result()
