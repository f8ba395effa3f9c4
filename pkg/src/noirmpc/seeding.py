"""Keyed random streams for reproducible, order-independent sampling.

Each draw site builds its own generator from an integer key tuple, so the
stream consumed by one road or one step never depends on how many draws
happened elsewhere.
"""

import numpy as np

# Key tags keep distinct draw purposes on distinct streams.
TAG_P = 0
TAG_Q = 1
TAG_INIT = 2
TAG_GRID = 3


def keyed_rng(*key: int) -> np.random.Generator:
    """Generator seeded by an integer key tuple (all components must be >= 0)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))
