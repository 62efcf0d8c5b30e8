"""Counter-based random streams keyed by (seed, tag, index).

Every stream is a Philox generator whose 128-bit key is derived from the
triple, so results do not depend on how replicates are scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream_key(seed: int, tag: str, index: int = 0) -> np.ndarray:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_tag_id(tag), int(index)))
    return ss.generate_state(2, dtype=np.uint64)


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, tag, index)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, index)))
