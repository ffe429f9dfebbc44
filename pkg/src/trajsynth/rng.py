"""Deterministic random-stream derivation.

Every stochastic component draws from a substream derived from a master seed
plus a tuple of context keys (stage name, user id, hour, ...), so results are
independent of iteration order and safe to parallelize.
"""

from __future__ import annotations

import zlib

import numpy as np


def key_to_int(key) -> int:
    """Map a context key (int or str) to a stable non-negative integer."""
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def substream(master_seed: int, *keys) -> np.random.Generator:
    """Generator seeded by ``master_seed`` and a tuple of context keys.

    The same (seed, keys) pair always yields the same stream, on any
    platform, regardless of how many other streams were created before it.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFF] + [key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
