"""Deterministic RNG derivation.

All randomness in the package flows from a single master seed through
counter-based splitting: every consumer derives an independent generator
from ``(seed, path...)`` where the path components are small integers or
short strings identifying the call site.  Two runs with the same seed and
the same call structure therefore produce bit-identical results, and
independent consumers never share a stream.
"""

import numpy as np

__all__ = ["rng_for", "spawn_key"]


def spawn_key(*path: int | str) -> tuple[int, ...]:
    """Map a mixed int/str path to the integer tuple SeedSequence expects."""
    key = []
    for part in path:
        if isinstance(part, str):
            # Stable, platform-independent string hash (FNV-1a, 32 bit).
            h = 2166136261
            for byte in part.encode("utf-8"):
                h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
            key.append(h)
        else:
            key.append(int(part) & 0xFFFFFFFF)
    return tuple(key)


def rng_for(seed: int, *path: int | str) -> np.random.Generator:
    """Return a generator for the stream identified by ``(seed, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*path))
    return np.random.default_rng(ss)
