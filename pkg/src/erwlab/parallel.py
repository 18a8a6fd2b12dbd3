"""Path-parallel execution.

Kernels take an array of path indices and return a tuple of per-path
arrays.  Because every path owns its own random stream, splitting the index
array into chunks and concatenating the results gives the same numbers for
any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

_DEFAULT_WORKERS = None


def default_workers() -> int:
    if _DEFAULT_WORKERS is not None:
        return _DEFAULT_WORKERS
    env = os.environ.get("ERWLAB_WORKERS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def set_default_workers(n) -> None:
    """Set the worker count used when callers pass ``workers=None``."""
    global _DEFAULT_WORKERS
    _DEFAULT_WORKERS = None if n is None else max(1, int(n))


def path_range(start: int, n: int) -> np.ndarray:
    return np.arange(start, start + n, dtype=np.int64)


def _call(func, before, after, paths):
    out = func(*before, paths, *after)
    return out if isinstance(out, tuple) else (out,)


def map_paths(func, paths, before=(), after=(), workers=None, min_chunk=256):
    """Evaluate ``func(*before, paths_chunk, *after)`` over chunks and concatenate.

    Returns a tuple of arrays (a bare array if ``func`` returns one).
    """
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    workers = default_workers() if workers is None else max(1, int(workers))
    n = len(paths)
    n_chunks = min(4 * workers, max(1, n // min_chunk)) if workers > 1 else 1
    if n_chunks <= 1:
        parts = [_call(func, before, after, paths)]
    else:
        chunks = [np.ascontiguousarray(c) for c in np.array_split(paths, n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_call, func, before, after, c) for c in chunks]
            parts = [f.result() for f in futures]
    if len(parts) == 1:
        out = parts[0]
    else:
        out = tuple(np.concatenate([p[i] for p in parts], axis=0) for i in range(len(parts[0])))
    return out if len(out) > 1 else out[0]
