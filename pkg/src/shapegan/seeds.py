"""Deterministic seed derivation.

A splitmix64 chain keeps derived seeds stable across platforms and library
versions, which matters because dataset manifests store the per-sample seeds
and regeneration must be bitwise reproducible.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(base: int, *parts: int) -> int:
    """Mix a base seed with integer tags into a new 63-bit seed."""
    h = _splitmix64(base & _MASK)
    for p in parts:
        h = _splitmix64(h ^ (p & _MASK))
    # numpy seeds must be non-negative; drop the top bit
    return h & (_MASK >> 1)
