"""Deterministic, splittable random streams.

Every stochastic routine in this package draws from a Philox counter-based
generator keyed by (seed, purpose, index...).  Distinct purposes give
statistically independent streams from the same user seed, which is what makes
sharded Monte-Carlo runs reproducible for a fixed (seed, shard-count) and lets
a simulator keep its event-time and update-coin streams independent.
"""

from __future__ import annotations

import numpy as np

# Stream purposes.  Values are arbitrary but frozen: changing them changes
# every seeded output in the package.
TIMES = 1
COINS = 2
SITES = 3
INIT = 4
SHARD = 5
SAMPLES = 6
HOLDOUT = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return a Generator for the (seed, *key) stream."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
