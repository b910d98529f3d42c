"""Deterministic random streams.

Every stochastic operation in this package takes an explicit
``numpy.random.Generator``. Streams are built on the Philox counter-based
bit generator keyed by a ``(seed, stream)`` pair: the same key always
replays the same draw sequence, and distinct stream ids yield
statistically independent streams. Parallel workers derive their stream
id from a stable hash of the case id, so results do not depend on
scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the (seed, stream) key. Same key, same sequence."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_id(name: str) -> int:
    """Stable 64-bit stream id for a string label (e.g. a case id)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
