"""Deterministic keyed random streams.

Every stochastic routine in this package draws from a stream keyed by
(master seed, purpose label, indices).  Two calls with the same key yield
identical draws, independent of call order, which is what makes trials
safe to run on any number of workers and reports bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "label_key"]


def label_key(label: str) -> int:
    """Stable 32-bit key for a purpose label (process-independent)."""
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return the generator keyed by (seed, label, indices).

    Indices may be any non-negative ints (pair ids, trial ids, row
    numbers, ...).  Negative seeds are folded into the unsigned domain.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, label_key(label)) + tuple(
        int(i) & 0xFFFFFFFFFFFFFFFF for i in indices
    )
    return np.random.default_rng(np.random.SeedSequence(entropy))
