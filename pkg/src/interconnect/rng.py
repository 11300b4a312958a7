"""Deterministic counter-based randomness.

Every random draw in the project comes from a Philox generator whose key
is a hash of a tuple naming the stream (run seed, purpose tag, step,
call index, ...).  Streams are independent of call order and platform,
which is what makes training trajectories, data generation, and resumed
runs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def philox_key(*parts) -> int:
    """Derive a 128-bit Philox key from a tuple of ints/strings."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def generator(*parts) -> np.random.Generator:
    """Fresh generator for the stream named by ``parts``."""
    return np.random.Generator(np.random.Philox(key=philox_key(*parts)))


class StepRng:
    """Dispenses one fresh stream per draw within a fixed scope.

    The k-th call to :meth:`next` returns the stream ``(*scope, k)``, so
    re-creating a ``StepRng`` with the same scope (e.g. after resuming
    from a checkpoint at a step boundary) replays identical randomness.
    """

    def __init__(self, *scope):
        self._scope = scope
        self._calls = 0

    def next(self) -> np.random.Generator:
        gen = generator(*self._scope, self._calls)
        self._calls += 1
        return gen
