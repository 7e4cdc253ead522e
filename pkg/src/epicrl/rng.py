"""Seed derivation.

Every random quantity in a run is drawn from a generator keyed by the run seed
plus a purpose path such as ``("rollout", update, task, draw)``. Streams are
therefore independent of evaluation order and of how work is scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    value = int(part)
    if value < 0:
        raise ValueError(f"seed path components must be non-negative, got {value}")
    return value


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & _MASK64,
                                  spawn_key=tuple(_key_part(p) for p in path))


def generator(seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """A 64-bit integer seed for a sub-stream."""
    state = seed_sequence(seed, *path).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
