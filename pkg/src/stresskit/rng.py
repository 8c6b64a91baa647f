"""Deterministic randomness: seed derivation and counter-based cell noise.

All randomness in the engine flows from a single top-level seed through
``derive_seed``, and all per-cell corruption noise comes from ``noise_vector``,
a stateless counter-based hash. Neither depends on call order, so concurrent
evaluations reproduce the sequential results exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1

# splitmix64 finalizer constants
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def derive_seed(*parts: object) -> int:
    """Derive a 63-bit child seed from an arbitrary tuple of labels.

    Parts are rendered with repr and joined, so derive_seed(7, "split") and
    derive_seed(7, "eval", 3) never collide in practice.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & ((1 << 63) - 1)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def noise_vector(seed: int, row_indices: np.ndarray, stream: int) -> np.ndarray:
    """Uniform [0,1) noise keyed by (seed, row index, stream id).

    ``stream`` identifies the corrupted attribute (its schema index, or one
    past the last index for the selection node). The value for a given key is
    independent of array shape and evaluation order.
    """
    idx = np.asarray(row_indices, dtype=np.uint64)
    base = np.uint64((seed & _MASK64) ^ ((stream * 0x9E3779B97F4A7C15) & _MASK64))
    z = _mix((idx + np.uint64(1)) * _GOLDEN ^ base)
    z = _mix(z + base)
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def noise_one(seed: int, row_index: int, stream: int) -> float:
    return float(noise_vector(seed, np.array([row_index], dtype=np.uint64), stream)[0])
