"""Counter-based random streams and order-preserving parallel execution.

Every sample draws from its own Philox stream keyed by (seed, tag, sample id),
so results never depend on how samples are distributed over workers.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

_TAG_BITS = 40


def tag_of(name: str) -> int:
    """Stable 24-bit tag for a named purpose (experiment, sampler, ...)."""
    return zlib.crc32(name.encode()) & 0xFFFFFF


def stream(seed: int, tag: int | str, sample_id: int) -> np.random.Generator:
    if isinstance(tag, str):
        tag = tag_of(tag)
    if not 0 <= sample_id < (1 << _TAG_BITS):
        raise ValueError("sample id out of range")
    # an explicit uint64 array: a list of large Python ints would pass through float64
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, (int(tag) << _TAG_BITS) | int(sample_id)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_chunk(args):
    fn, seed, tag, ids, extra = args
    return [fn(i, stream(seed, tag, i), *extra) for i in ids]


def map_samples(fn: Callable, n: int, seed: int, tag: int | str, workers: int = 1,
                extra: Sequence = (), chunk: int | None = None) -> list:
    """[fn(i, stream(seed, tag, i), *extra) for i in range(n)], possibly in parallel.

    ``fn`` must be a module-level function when workers > 1. The returned list
    is always in sample order.
    """
    if workers <= 1 or n < 2:
        return _run_chunk((fn, seed, tag, range(n), tuple(extra)))
    chunk = chunk or max(1, n // (4 * workers))
    jobs = [(fn, seed, tag, range(a, min(n, a + chunk)), tuple(extra)) for a in range(0, n, chunk)]
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_chunk, jobs):
            out.extend(part)
    return out
