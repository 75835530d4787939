"""Deterministic stream derivation for reproducible runs.

Replicates and folds derive independent counter-based streams from
(seed, tag, slot) triples, so results do not depend on execution order or
worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer; a cheap, well-scrambled 64-bit hash."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def tag64(name: str) -> int:
    """Stable 64-bit tag for a string label."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def stream(seed: int, tag: int, slot: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, tag, slot).

    Distinct triples give independent Philox streams, which keeps replicate
    draws identical regardless of scheduling.
    """
    key = [seed & _MASK64, splitmix64(splitmix64(tag & _MASK64) + (slot & _MASK64))]
    return np.random.Generator(np.random.Philox(key=key))


def permutation(seed: int, n: int) -> np.ndarray:
    """Deterministic permutation of range(n) from splitmix64 sort keys."""
    keys = [splitmix64((seed & _MASK64) ^ splitmix64(i + 1)) for i in range(n)]
    return np.argsort(np.array(keys, dtype=np.uint64), kind="stable")
