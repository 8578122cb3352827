"""Reproducible random streams.

Every stochastic step draws from a Philox-4x64 generator (counter based,
64-bit words).  A stream is addressed by a master seed plus a path of
integer or string labels, e.g. ``stream(seed, "split", iteration)``.  The
path is folded into the Philox key with a SeedSequence hash, so sibling
streams are independent and the result does not depend on the order in
which streams are requested.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError("stream path components must be non-negative")
    return int(part)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator for ``seed`` and the labelled sub-stream ``path``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_word(p) for p in path]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed: int, *path: int | str) -> int:
    """A 64-bit seed derived from ``seed`` and ``path`` (for handing to sub-tasks)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_word(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
