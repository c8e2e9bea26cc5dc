"""Shared runtime helpers: thread capping, seed derivation, file digests."""

from __future__ import annotations

import hashlib
import os

import numpy as np

THREADS_ENV = "VIZISCAN_THREADS"

_numba_threads_set = False


def thread_cap() -> int:
    """Maximum internal parallelism, from VIZISCAN_THREADS (default: all cores)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return max(1, os.cpu_count() or 1)


def apply_thread_cap() -> int:
    """Clamp numba's thread pool to the cap. Safe to call repeatedly."""
    global _numba_threads_set
    cap = thread_cap()
    if not _numba_threads_set:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
        _numba_threads_set = True
    return cap


def derive_seed(seed: int, *tags: int) -> int:
    """Derive an independent substream seed from (seed, tags).

    Parallel work items each get their own stream keyed by index, so results
    do not depend on scheduling order or thread count.
    """
    ss = np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0])


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, tags)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags)))


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
