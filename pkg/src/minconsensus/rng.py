"""Deterministic random streams.

All randomness in this package flows through :func:`stream`, which derives
an independent Philox generator from a root seed plus an integer key path.
Philox is counter-based, so two streams with different key paths never
overlap and every draw is reproducible bit for bit.

Key paths are built from the tags below, e.g. ``stream(seed, NOISE, trial, k)``
is the weight-noise stream of one trial at round ``k``.  Keeping graph
generation, scheduling, delays, noise and initial conditions on separate
tags means changing one process never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np

GRAPH = 0
SCHEDULE = 1
DELAYS = 2
NOISE = 3
INIT = 4
FUZZ = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator addressed by ``(seed, *path)``."""
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
