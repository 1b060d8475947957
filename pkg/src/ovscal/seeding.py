"""Deterministic RNG streams keyed by tuples of integers."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def keyed_rng(*keys: int) -> np.random.Generator:
    """Generator whose stream is a pure function of the key tuple.

    Keys may be any Python ints (negative values are folded into uint64).
    """
    return np.random.default_rng([int(k) & _MASK64 for k in keys])
