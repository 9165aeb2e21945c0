"""Named random streams split from a master seed.

A stream is identified by a tuple of keys (ints, strings, or nested tuples
of ints such as lattice sites).  The same keys always give the same
stream, and different keys give statistically independent streams, so the
randomness attached to one cycle never depends on which other cycles are
being simulated.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _words(key) -> list[int]:
    """Map a key to non-negative 32-bit words without collisions across types."""
    if isinstance(key, (bool, np.bool_)):
        return [1, int(key)]
    if isinstance(key, (int, np.integer)):
        k = int(key)
        # zigzag so negative coordinates stay distinct
        z = 2 * k if k >= 0 else -2 * k - 1
        return [2, z & 0xFFFFFFFF, z >> 32]
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
        return [3, int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]
    if isinstance(key, (tuple, list)):
        out = [4, len(key)]
        for k in key:
            out.extend(_words(k))
        return out
    raise TypeError(f"unsupported stream key {key!r}")


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_words(keys)))
    return np.random.Generator(np.random.PCG64(ss))
