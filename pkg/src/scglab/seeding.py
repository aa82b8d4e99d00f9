"""Keyed random streams.

Every stochastic component draws from a generator derived from the
master seed plus a structural key (episode index, role period, purpose
tag), so results are reproducible regardless of call interleaving or
worker scheduling.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "TAG_GRAPH", "TAG_ROLES", "TAG_SLOTS", "TAG_INIT"]

# purpose tags keep sibling streams at the same (episode, period) apart
TAG_INIT = 0
TAG_GRAPH = 1
TAG_ROLES = 2
TAG_SLOTS = 3


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for ``(master_seed, *key)``; same key, same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))
