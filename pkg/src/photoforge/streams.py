"""Deterministic random streams.

Every stochastic routine in this package draws from a counter-based Philox
generator keyed by a (seed, tag, m, index) tuple. Distinct samples get
disjoint streams, so outputs never depend on generation order or on how
work is spread over processes. The key layout below is part of the
reproducibility contract: datasets regenerate bit-identically from their
seed.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Changing these values changes every generated dataset.
TAG_SAMPLER = 1
TAG_AUGMENT = 2
TAG_SPLIT = 3

_MASK48 = (1 << 48) - 1
_MASK64 = (1 << 64) - 1


def stream(seed: int, tag: int, m: int = 0, index: int = 0) -> np.random.Generator:
    """Return the Philox generator for one logical stream.

    The 128-bit Philox key packs the seed into the high word and
    (tag << 56 | m << 48 | index) into the low word, so the index may use
    48 bits. The same tuple always yields the same sequence, on any
    platform.
    """
    if not 0 <= index <= _MASK48:
        raise ValueError(f"stream index must fit in 48 bits, got {index}")
    if not 0 <= tag < 256 or not 0 <= m < 256:
        raise ValueError(f"tag and m must fit in 8 bits, got tag={tag} m={m}")
    low = (tag << 56) | (m << 48) | index
    key = ((seed & _MASK64) << 64) | low
    return np.random.Generator(np.random.Philox(key=key))
