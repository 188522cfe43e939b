"""Seeded substreams over a counter-based bit generator.

Every stochastic routine in the package derives its generator from a user
seed plus a short path of labels/integers, so results are reproducible for a
given seed regardless of evaluation order or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream_rng"]


def _as_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def substream_rng(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by (seed, *path)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_as_int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
