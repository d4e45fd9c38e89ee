"""Deterministic seed derivation for reproducible simulations.

Every source of randomness in a run is a numpy Generator seeded from the
experiment's root seed plus a label path, e.g. (root, "client", round, id).
Derivation goes through blake2b rather than Python's hash() so results are
stable across processes and platforms.
"""

from __future__ import annotations

from hashlib import blake2b

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Map a label path to a stable 64-bit seed."""
    h = blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def make_rng(*parts: int | str) -> np.random.Generator:
    """Generator seeded from a label path (see derive_seed)."""
    return np.random.default_rng(derive_seed(*parts))
