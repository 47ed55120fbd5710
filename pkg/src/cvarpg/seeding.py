"""Deterministic RNG substreams.

Every stochastic component draws from a child generator derived from the
master seed plus a structured path (e.g. ``("pg", round, iteration,
trajectory)``), so results are reproducible bit-for-bit regardless of
execution order or sharding.
"""
from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=4096)
def _string_token(part: str) -> int:
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _token(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    return _string_token(str(part))


def substream(master_seed: int, *path: int | str) -> np.random.Generator:
    """Child generator for (master seed, path), stable across processes."""
    entropy = [_token(master_seed)] + [_token(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
