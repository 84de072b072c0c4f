"""Counter-based random streams.

Every consumer asks for a generator by ``(seed, key...)``.  Keys are small
integer tuples naming the purpose and batch, so a batch draws the same
numbers no matter which worker runs it or in what order.
"""
from __future__ import annotations

import secrets

import numpy as np

# purpose tags, the first element of every stream key
OUTER, INNER, PATH, BOOTSTRAP, CHECK = 1, 2, 3, 4, 5


def generator(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed`` and the stream ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def fresh_seed() -> int:
    """A new 63-bit seed, for runs that were not given one."""
    return secrets.randbits(63)
