"""Deterministic per-purpose RNG streams derived from one master seed.

Each stream gets its own SeedSequence spawn key, so consuming one stream
never perturbs another: ablated models that skip a component draw identical
initializations for the components they share.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_DROPOUT = 2
STREAM_DATA = 3

INIT_EMBED = 0
INIT_ENCODER = 1
INIT_CROSS = 2
INIT_DEEP = 3
INIT_HEAD = 4


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(which,)))


def init_stream(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(STREAM_INIT, component)))
