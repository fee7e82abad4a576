"""Deterministic seed derivation.

Every stochastic step in the simulator draws from a numpy Generator whose
seed is derived from the experiment master seed and the step's coordinates
(round, node id, config label, ...). Derivation is pure arithmetic over a
keyed hash, so results are independent of scheduling and platform.
"""
from __future__ import annotations

import hashlib

import numpy as np

_U64 = 2**64 - 1


def derive_seed(base: int, *parts: object) -> int:
    """XOR ``base`` with a stable 64-bit hash of ``parts``."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return (base ^ int.from_bytes(h.digest(), "little")) & _U64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & _U64)
