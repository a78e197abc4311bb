"""Seed derivation.

Every random draw in a run comes from a stream keyed by
``(master_seed, *key)``; work units never share a stream, so results do not
depend on the order in which units are executed.
"""

from __future__ import annotations

import numpy as np

# stream tags (first element of the spawn key)
PAIRS = 1
HERALD = 2
SIGNAL = 3
HERALD_DARK = 4
SIGNAL_DARK = 5
SWITCH = 6
HOM = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for a sub-task."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
