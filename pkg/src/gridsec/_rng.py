"""Named, reproducible random substreams derived from a single seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str | int) -> np.random.SeedSequence:
    """SeedSequence for ``seed`` extended by a path of names (stable across runs)."""
    key = tuple(n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def subseed(seed: int, *names: str | int) -> int:
    """A 63-bit integer seed for the named substream."""
    return int(substream(seed, *names).generate_state(2, np.uint64)[0] >> np.uint64(1))
