"""Deterministic seed derivation and counter-based random streams.

All randomness in the pipeline flows from a single 64-bit run seed.
Sub-streams are derived by hashing ``(seed, purpose string)`` with SHA-256
and using the digest as a Philox key. Philox is counter-based, so any
component (one pixel, one frame, one training fold) can draw its own
stream independently of execution order, which keeps parallel or
re-ordered evaluation bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_key", "generator"]

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _digest(seed: int, purpose: str) -> bytes:
    msg = f"{seed & _MASK64:016x}:{purpose}".encode()
    return hashlib.sha256(msg).digest()


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a 64-bit sub-seed from (seed, purpose)."""
    return int.from_bytes(_digest(seed, purpose)[:8], "little")


def derive_key(seed: int, purpose: str) -> np.ndarray:
    """Derive a 128-bit Philox key from (seed, purpose)."""
    d = _digest(seed, purpose)
    return np.frombuffer(d[:16], dtype=np.uint64).copy()


def generator(seed: int, purpose: str) -> np.random.Generator:
    """Independent random stream for one named purpose."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, purpose)))
