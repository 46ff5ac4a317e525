"""One master seed, split into independent named streams."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "child_seeds"]


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def stream(master: int, *keys) -> np.random.Generator:
    """Counter-based generator for ``(master, *keys)``; strings are hashed with CRC-32."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master) & (2**64 - 1), *map(_key, keys)])))


def child_seeds(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """``n`` fresh per-episode generators drawn from ``rng``."""
    return [np.random.Generator(np.random.Philox(int(s))) for s in rng.integers(0, 2**63 - 1, size=n)]
