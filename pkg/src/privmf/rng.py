"""Deterministic derivation of independent RNG streams.

Every stochastic component draws from its own generator, keyed by a
structured tuple (master seed, purpose tag, ...). Re-deriving a stream
with the same key reproduces it exactly, which is what makes simulated
runs bit-reproducible and lets clients run concurrently without sharing
generator state.
"""

from __future__ import annotations

import numpy as np

# Purpose tags so distinct consumers of the same master seed never collide.
TAG_MODEL_INIT = 1
TAG_REGULARIZERS = 2
TAG_CENTRAL_TRAIN = 3
TAG_CLIENT_INIT = 4
TAG_CLIENT_ROUND = 5
TAG_ISGLD = 6
TAG_REPETITION = 7


def derive_rng(*key: int) -> np.random.Generator:
    """Return a Generator determined entirely by the integer key tuple."""
    parts = [int(p) for p in key]
    if any(p < 0 for p in parts):
        raise ValueError(f"rng key parts must be non-negative, got {parts}")
    return np.random.default_rng(np.random.SeedSequence(parts))
