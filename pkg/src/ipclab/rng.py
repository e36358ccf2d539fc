"""Deterministic random streams for reproducible parallel Monte Carlo.

Every stream is keyed by ``(seed, purpose, block)`` through
:class:`numpy.random.SeedSequence`, so results never depend on how many
workers run the blocks or in which order they finish.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

DEFAULT_SEED = 20240601
THREADS_ENV = "IPCLAB_THREADS"

T = TypeVar("T")


def purpose_key(name: str) -> int:
    """Stable 32-bit key for a textual stream purpose."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the stream addressed by ``seed`` and a key path."""
    spawn_key = tuple(purpose_key(k) if isinstance(k, str) else int(k) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(n_trials: int, block_size: int) -> list[int]:
    """Split ``n_trials`` into consecutive blocks of at most ``block_size``."""
    if n_trials <= 0:
        return []
    full, rest = divmod(n_trials, block_size)
    return [block_size] * full + ([rest] if rest else [])


def resolve_threads(requested: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(requested or 1))


def map_blocks(
    func: Callable[[np.random.Generator, int, int], T],
    seed: int,
    purpose: str,
    n_trials: int,
    block_size: int = 1024,
    threads: int | None = None,
) -> list[T]:
    """Run ``func(rng, first_trial, n)`` over trial blocks.

    Results come back in block order. Block ``b`` always gets the stream
    ``stream(seed, purpose, b)``, regardless of the thread count.
    """
    sizes = block_sizes(n_trials, block_size)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if sizes else []
    jobs = [(stream(seed, purpose, b), int(starts[b]), n) for b, n in enumerate(sizes)]
    workers = resolve_threads(threads)
    if workers == 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if len(parts) else np.empty(0)
