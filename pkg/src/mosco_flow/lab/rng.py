"""Counter-based SplitMix64 generator.

Value ``i`` of stream ``seed`` is ``mix(seed + (i + 1) * GOLDEN)`` where, on
64-bit unsigned integers,

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

and ``GOLDEN = 0x9E3779B97F4A7C15``.  A double in ``[0, 1)`` is
``(z >> 11) * 2**-53``.  Being counter based, any entry can be computed on its
own, so every implementation agrees bit for bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` raw 64-bit outputs of stream ``seed``."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK) + idx * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, count: int) -> np.ndarray:
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_symmetric(seed: int, count: int) -> np.ndarray:
    """Doubles in ``[-1, 1)``."""
    return 2.0 * uniform01(seed, count) - 1.0
