"""Portable seeded randomness.

Every random draw in the package goes through :func:`generator`, which
returns a numpy ``Generator`` backed by the counter-based Philox4x64-10
bit generator keyed from a ``SeedSequence``.  Philox output is fully
specified, so identical seeds give identical streams on every platform.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer (Steele, Lea & Flood)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Mix ``(master_seed, index)`` into an independent 64-bit seed."""
    return splitmix64((splitmix64(master_seed & _MASK64) ^ (index & _MASK64)) & _MASK64)


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional integer stream path.

    ``generator(s, 3, 7)`` is independent of ``generator(s, 3, 8)``; this is
    how per-epoch VAE noise and per-stage draws are kept order-independent.
    """
    entropy = [int(seed) & _MASK64, *(int(k) & _MASK64 for k in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
