"""Seed derivation.

Every random decision in the package is keyed by a tuple rooted at one
global seed, e.g. ``derive_seed(seed, "episode", episode_index)`` or
``derive_seed(pass_base, "pass", j)``. String keys are hashed with CRC32 so
the mapping is stable across processes and Python versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"seed components must be non-negative, got {part}")
    return int(part)


def derive_seed(*parts: int | str) -> int:
    """Return a 63-bit seed that is a pure function of ``parts``."""
    seq = np.random.SeedSequence([_key(p) for p in parts])
    return int(seq.generate_state(1, dtype=np.uint64)[0]) >> 1


def rng(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
