"""Deterministic named random substreams.

Every source of randomness in the package draws from ``rng_for(seed, label)``
so that a single top-level seed fans out into independent, reproducible
streams (data generation, parameter init, splits, shuffles, probes).
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(label: str) -> int:
    """Stable 64-bit integer derived from a stream label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Generator for the substream ``label`` of the run seed ``seed``.

    The same (seed, label) pair always yields an identical stream, and
    distinct labels yield statistically independent streams.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(label)])
    return np.random.Generator(np.random.PCG64(ss))
