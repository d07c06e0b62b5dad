"""Counter-based random streams.

Every random number used by the Gibbs sampler is a pure function of
``(seed, stream tag, element key, counter)``.  Element keys are stable hashes
of protein / peptide identifiers, so a protein's draws do not depend on where
it sits in the dataset or on which backend computes them.

The mixing function is the SplitMix64 finalizer; a stream seeded at ``ek``
and read at counters ``0, 1, 2, ...`` is exactly the SplitMix64 sequence
started from ``ek``.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# counters are (sweep << SWEEP_SHIFT) | draw index
SWEEP_SHIFT = 24

# stream tags
TAG_IMPUTE = 1
TAG_ALPHA = 2
TAG_MU = 3
TAG_THETA = 4
TAG_INIT = 5


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_base(seed: int, tag: int) -> int:
    return mix64((mix64(seed) + tag * GOLDEN) & MASK64)


def element_keys(seed: int, tag: int, keys: np.ndarray) -> np.ndarray:
    """Per-element stream seeds for one tag."""
    base = np.uint64(stream_base(seed, tag))
    return mix64_array(np.asarray(keys, dtype=np.uint64) ^ base)


def stable_key(*parts: str) -> int:
    """64-bit key from identifier strings; independent of PYTHONHASHSEED."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def counter(sweep: int, index: int = 0) -> int:
    return ((sweep << SWEEP_SHIFT) | index) & MASK64


class CounterStream:
    """Sequential view on one counter stream.

    Duck-types the two :class:`numpy.random.Generator` methods the
    distribution helpers need, so either can be passed as ``rng``.
    """

    def __init__(self, seed: int, tag: int, key: int = 0, sweep: int = 0):
        self._ek = mix64(stream_base(seed, tag) ^ (key & MASK64))
        self._next = counter(sweep)

    def _take(self, n: int) -> np.ndarray:
        ctr = np.arange(n, dtype=np.uint64) + np.uint64(self._next + 1)
        self._next += n
        with np.errstate(over="ignore"):
            h = mix64_array(np.uint64(self._ek) + ctr * np.uint64(GOLDEN))
        return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def random(self, size=None):
        if size is None:
            return float(self._take(1)[0])
        return self._take(int(np.prod(size))).reshape(size)

    def standard_normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self._take(2 * n)
        z = np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * math.pi * u[1::2])
        if size is None:
            return float(z[0])
        return z.reshape(size)
