"""Seeded random streams.

Every random draw in the project (noise samples, shuffles, dataset sampling,
weight initialization) flows through a RandomTape owned by the caller, never
through ambient numpy randomness.  Cloning a tape replays the identical draw
sequence, which is what makes common-random-number finite-difference checks
and bit-identical reruns possible.
"""

from __future__ import annotations

import copy
import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class RandomTape:
    """Deterministic random stream keyed by a seed plus optional child tags."""

    def __init__(self, seed):
        if isinstance(seed, (list, tuple)):
            key = tuple(seed)
        else:
            key = (seed,)
        self.key = tuple(_tag_to_int(t) for t in key)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.key)))

    def child(self, *tags) -> "RandomTape":
        """Independent stream derived deterministically from this tape's key."""
        return RandomTape(self.key + tags)

    def clone(self) -> "RandomTape":
        """Copy that replays exactly the draws this tape will produce next."""
        out = object.__new__(RandomTape)
        out.key = self.key
        out._gen = copy.deepcopy(self._gen)
        return out

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=(), low=0.0, high=1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
