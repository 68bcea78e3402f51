"""Deterministic random-stream derivation.

Every stochastic routine in this package receives either an explicit
``numpy.random.Generator`` or a ``(master_seed, *key)`` pair that is mapped to
an independent substream.  The mixing function is ``numpy.random.SeedSequence``
with the key used as ``spawn_key``: the same (seed, key) always yields the
same stream, distinct keys yield statistically independent streams, and the
mapping is stable across processes, so repetitions and levels can run in
parallel without changing results.
"""

from __future__ import annotations

import numpy as np

__all__ = ["seed_sequence", "generator"]


def seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    """SeedSequence for substream ``key`` of ``master_seed``."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))


def generator(master_seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator on the (master_seed, key) substream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *key)))
