"""Seeded, splittable random streams.

Every random operation draws from its own substream derived from
``(seed, *keys)`` so results do not depend on call order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator for the substream ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng_or_seed, *keys) -> np.random.Generator:
    """Accept either a Generator (used as is) or an integer seed."""
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return substream(0 if rng_or_seed is None else rng_or_seed, *keys)
