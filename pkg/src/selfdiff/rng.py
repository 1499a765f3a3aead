"""Keyed random streams.

All stochastic code takes an explicit numpy Generator.  Streams for
independent subtasks are derived from the master seed by hashing a short
purpose label together with integer indices, so a subtask's draws never
depend on scheduling order or on how many other streams exist.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def seed_sequence_for(seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    if any(int(i) < 0 for i in indices):
        raise ValueError("stream indices must be non-negative")
    key = zlib.crc32(purpose.encode("ascii"))
    entropy = [int(seed) & _MASK, key, *(int(i) for i in indices)]
    return np.random.SeedSequence(entropy)


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Generator keyed by (seed, purpose, indices)."""
    return np.random.default_rng(seed_sequence_for(seed, purpose, *indices))
