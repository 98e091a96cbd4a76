"""Seed splitting.

Every random stream is derived from a root seed plus an integer path, so two
policies evaluated on episode ``k`` of a cell see the same crowd.
"""

import numpy as np


def derive_seed(*path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in path])


def generator(*path: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by an integer path."""
    return np.random.Generator(np.random.Philox(derive_seed(*path)))


def child_int(*path: int) -> int:
    """A 63-bit integer seed derived from ``path``."""
    return int(derive_seed(*path).generate_state(1, np.uint64)[0]) >> 1
