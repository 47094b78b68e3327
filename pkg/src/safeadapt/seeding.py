"""Deterministic random-stream splitting.

Every stochastic consumer gets its own generator derived from the master
seed, a role tag and any number of integer counters::

    key   = (crc32(tag), *counters)
    seq   = SeedSequence(entropy=master_seed, spawn_key=key)
    rng   = Generator(PCG64(seq))

Streams with different (tag, counters) are statistically independent and no
global RNG state is ever touched, so runs are reproducible regardless of the
order in which phases consume randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def make_rng(master_seed: int, tag: str = "", *counters: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    key = (tag_id(tag),) + tuple(int(c) for c in counters)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(int(seed))
