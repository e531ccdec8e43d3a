"""Seed derivation shared by every randomized component.

All randomness descends from one integer experiment seed.  A component asks
for its own stream by name (and optionally an index); the child seed is the
first 8 bytes of ``sha256("<seed>/<name>/<index>")`` read big-endian, and the
generator is numpy's PCG64 seeded with it.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, name: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{name}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, name, index)))
