"""Deterministic chunked reductions.

Partial sums are computed over fixed index chunks (optionally on a thread
pool) and combined by a pairwise tree in chunk order, so the result does not
depend on the number of worker threads.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_threads = 1
DEFAULT_CHUNK = 4096


def set_threads(k: int) -> None:
    global _threads
    if k < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(k)


def get_threads() -> int:
    return _threads


def _tree(parts):
    parts = list(parts)
    if not parts:
        return 0.0
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def chunked_sum(fn, n: int, chunk: int = DEFAULT_CHUNK):
    """Sum ``fn(start, stop)`` over consecutive index chunks covering ``range(n)``."""
    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if _threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=_threads) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    else:
        parts = [fn(a, b) for a, b in bounds]
    return _tree(parts)


def tree_sum(values: np.ndarray, chunk: int = DEFAULT_CHUNK):
    """Sum along the first axis with the same fixed chunking."""
    values = np.asarray(values)
    return chunked_sum(lambda a, b: values[a:b].sum(axis=0), values.shape[0], chunk)
