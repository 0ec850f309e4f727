"""
Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by PCG64, keyed by a 64-bit seed plus a tuple of stream ids. Two
calls with the same key yield the same stream, and distinct stream ids give
statistically independent streams (``SeedSequence`` spawn keys). Nothing
touches numpy's global RNG.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _stream_id(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def make_rng(seed, *stream):
    """Generator for ``seed`` and stream ids (ints or strings)."""
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(_stream_id(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed, *stream):
    """A fresh 64-bit seed derived from ``seed`` and stream ids."""
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(_stream_id(s) for s in stream))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
