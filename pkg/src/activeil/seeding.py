"""Deterministic RNG derivation from a base seed and a tuple of keys."""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("seed keys must be non-negative")
    return k


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence([_key(seed)] + [_key(k) for k in keys])
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1 << 31, 1], dtype=np.uint64))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_key(seed)] + [_key(k) for k in keys]))
