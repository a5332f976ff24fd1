"""Deterministic RNG derivation.

Every source of randomness in the package flows from one master seed.
Sub-streams are derived by hashing (seed, purpose, indices...) so results
do not depend on call order or scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_entropy(master_seed: int, *scope: object) -> list[int]:
    """Hash a master seed plus a scope path into 128 bits of entropy."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for part in scope:
        h.update(b"/")
        h.update(str(part).encode())
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 16, 8)]


def derive_rng(master_seed: int, *scope: object) -> np.random.Generator:
    """Independent generator for (master_seed, *scope)."""
    return np.random.default_rng(np.random.SeedSequence(derive_entropy(master_seed, *scope)))
