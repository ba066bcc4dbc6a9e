"""Named, seeded random sub-streams.

Every stochastic draw in the simulator comes from a generator obtained with
:func:`substream`, keyed by the global seed plus a tuple of names/indices. The
same key always yields the same stream, independent of execution order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *key) -> np.random.Generator:
    """Return a generator for the sub-stream ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
