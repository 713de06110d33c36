"""Counter-based random streams.

Every stochastic routine in the package draws from a stream keyed by
(seed, purpose, *indices). Streams are independent Philox generators, so
any draw can be regenerated in isolation: the fixed-noise variational
algorithm re-creates the exact noise of sample j at every iteration, and
per-voxel or per-sample work can be farmed out to workers without
changing the result.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream"]


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the deterministic generator for (seed, purpose, *indices).

    The same key always yields a generator producing the same draws,
    independent of any other stream.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_code(purpose)) + tuple(
        int(i) & 0xFFFFFFFFFFFFFFFF for i in indices
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=entropy)))
