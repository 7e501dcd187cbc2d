"""Seeded random streams.

Every stream is a Philox counter-based generator keyed by the root seed
plus a tuple of stream labels, so independent work units (trajectories,
Monte Carlo blocks) draw from non-overlapping sequences regardless of the
order in which they run.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEED = 0


def make_rng(seed: int | None = None, *stream: int) -> np.random.Generator:
    seed = DEFAULT_SEED if seed is None else int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))
