"""Seeded substreams.

Every random quantity in the toolkit is drawn from a generator derived from
``(master_seed, key...)`` so results do not depend on evaluation order or on
how work is split across threads.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_key(label: str) -> int:
    """Map an opaque label (e.g. a problem id) to a 32-bit integer key."""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


def substream(master_seed: int, *keys: int | str) -> np.random.Generator:
    entropy = [int(master_seed) & 0xFFFFFFFF]
    for k in keys:
        entropy.append(stable_key(k) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(master_seed: int, *keys: int | str) -> int:
    """A child integer seed, for APIs that take a seed rather than a generator."""
    return int(substream(master_seed, *keys).integers(0, 2**31 - 1))
