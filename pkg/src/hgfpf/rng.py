"""Seeded random streams.

All randomness goes through Philox4x64-10, numpy's counter-based bit
generator. A stream is keyed by a tuple of non-negative integers (run seed
plus purpose tags) hashed with ``numpy.random.SeedSequence``, so every
draw is a pure function of its key and independent of scheduling.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "Philox4x64-10"

# purpose tags
STREAM_TRUTH_STATE = 1
STREAM_TRUTH_OBS = 2
STREAM_FILTER_INIT = 3
STREAM_FILTER_NOISE = 4
STREAM_SAMPLE = 5
STREAM_INCREMENTS = 6


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    if seed < 0 or any(t < 0 for t in tags):
        raise ValueError("seeds and stream tags must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, tags)])))
