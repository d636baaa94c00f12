"""Seeded, splittable random streams.

Every random draw in the package goes through :func:`stream`, which builds a
counter-based Philox generator from a 64-bit seed and a tuple of string keys.
Two calls with the same ``(seed, keys)`` yield bit-identical draws regardless
of call order or thread placement.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_words(keys):
    return tuple(zlib.crc32(str(k).encode("utf-8")) for k in keys)


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for the sub-stream ``keys`` of ``seed``."""
    seq = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=_key_words(keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, *keys):
    """Derive a child 64-bit seed, stable across platforms."""
    seq = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=_key_words(keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
