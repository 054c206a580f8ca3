"""Deterministic seed derivation and stable content hashing.

Every stochastic component derives its generator from the run seed plus a
string scope, so results never depend on call order, thread count, or
platform hash randomization.  Philox is counter based and splittable, which
keeps independently derived streams statistically disjoint.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest(parts: tuple) -> bytes:
    text = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).digest()


def derive_key(*parts) -> tuple[int, int]:
    """Derive a 128-bit Philox key from arbitrary hashable scope parts."""
    d = _digest(parts)
    return tuple(int.from_bytes(d[i : i + 8], "little") for i in range(0, 16, 8))


def generator(*parts) -> np.random.Generator:
    """Counter-based generator keyed by the given scope parts."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))


def derive_seed(*parts) -> int:
    """Derive a non-negative 63-bit integer seed from scope parts."""
    d = _digest(parts)
    return int.from_bytes(d[:8], "little") >> 1


def stable_hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def stable_hash_floats(values: np.ndarray, decimals: int = 6) -> str:
    """Content hash of a float array, robust to sub-rounding noise.

    Rounding keeps the hash stable across storage round-trips through 32-bit
    floats while still distinguishing genuinely different inputs.
    """
    arr = np.asarray(values, dtype=np.float64)
    rounded = np.round(arr, decimals) + 0.0  # fold -0.0 into +0.0
    payload = repr(arr.shape).encode() + rounded.astype("<f8").tobytes()
    return stable_hash_bytes(payload)
