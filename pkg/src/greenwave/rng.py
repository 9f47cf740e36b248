"""Named, independently seeded random streams for one scenario.

Every stochastic draw in a scenario flows through a stream derived from the
scenario seed plus a stable purpose key, so paired runs (same seed, different
controller) consume bit-identical randomness and results never depend on
scheduling or worker count.
"""
from __future__ import annotations

import numpy as np

# stable purpose keys; never renumber, serialized seeds depend on them
STREAM_ARRIVALS = 1
STREAM_DRIVERS = 2
STREAM_ADOPTION = 3
STREAM_CONTEXT = 4
STREAM_ACTIONS = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for (seed, key). Same arguments, same bit stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def derive_seed(seed: int, *key: int) -> int:
    """Stable 63-bit sub-seed for (seed, key), for reporting and replay."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0] >> 1)
