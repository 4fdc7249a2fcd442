"""Seeded random streams.

All randomness comes from numpy's Philox4x64-10 counter-based bit
generator wrapped in a ``numpy.random.Generator``. Philox output depends
only on (key, counter), so a given seed yields the same stream on every
platform and numpy build.
"""

import os

import numpy as np

DEFAULT_SEED = 0


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def default_seed():
    """Seed from ``QOR_SEED`` if set, else 0."""
    value = os.environ.get("QOR_SEED")
    return int(value) if value not in (None, "") else DEFAULT_SEED
