"""Keyed random streams and deterministic chunked execution.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(master seed, *path)`` through ``numpy.random.SeedSequence``.
Work is split into fixed-size chunks, each with its own key, so the numbers
drawn never depend on how many threads execute the chunks.
"""
from __future__ import annotations

import os
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_THREADS: int | None = None
_ACCOUNT = Counter()
_ACCOUNT_LOCK = threading.Lock()

# purpose tags keep streams of different experiments disjoint
TAGS = {
    "env": 1,
    "corr": 2,
    "polymer": 3,
    "annealed": 4,
    "field": 5,
    "brownian": 6,
    "pairing": 7,
    "localtime": 8,
    "poisson": 9,
    "vcheck": 10,
    "double": 11,
    "chaos": 12,
    "norms": 13,
}


def set_threads(n: int | str | None) -> None:
    """Set the default worker count (``None`` or "auto" uses all cores)."""
    global _THREADS
    if n is None or n == "auto":
        _THREADS = None
    else:
        n = int(n)
        if n < 1:
            raise ValueError("thread count must be >= 1")
        _THREADS = n


def get_threads() -> int:
    return _THREADS if _THREADS is not None else (os.cpu_count() or 1)


def _check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator keyed by ``(seed, *path)``; distinct paths never overlap."""
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(p) for p in path))
    with _ACCOUNT_LOCK:
        _ACCOUNT[int(path[0]) if path else -1] += 1
    key = ss.generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_accounting(reset: bool = False) -> dict[str, int]:
    """Number of keyed streams opened per purpose tag since the last reset."""
    names = {v: k for k, v in TAGS.items()}
    with _ACCOUNT_LOCK:
        out = {names.get(k, str(k)): n for k, n in sorted(_ACCOUNT.items())}
        if reset:
            _ACCOUNT.clear()
    return out


def chunk_bounds(total: int, chunk: int) -> list[tuple[int, int]]:
    """Half-open index ranges of fixed size ``chunk`` covering ``range(total)``."""
    return [(a, min(a + chunk, total)) for a in range(0, total, chunk)]


def map_ordered(fn: Callable[[int], T], n: int, threads: int | None = None) -> list[T]:
    """Evaluate ``fn(i)`` for ``i < n`` and return results in index order."""
    threads = get_threads() if threads is None else threads
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as ex:
        return list(ex.map(fn, range(n)))


def mean_se(values: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no samples")
    if v.size == 1:
        return float(v[0]), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))
