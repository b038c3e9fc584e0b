"""Deterministic, splittable random streams.

Every stochastic routine in the package takes an integer ``seed`` and derives
its generator through :func:`derive_rng`.  The generator is counter-based
(Philox), so replication ``r`` of experiment ``e`` can be reproduced in
isolation by deriving ``derive_rng(seed, e, r)`` without running the other
replications.  No global RNG state is ever touched.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_rng"]


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for the stream ``(seed, *path)``.

    ``path`` elements must be non-negative integers; distinct paths give
    statistically independent streams for the same master seed.
    """
    key = tuple(int(p) for p in path)
    if any(p < 0 for p in key):
        raise ValueError("rng path elements must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
