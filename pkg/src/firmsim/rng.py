"""Counter-based random numbers keyed by (seed, year, firm_id, purpose).

Every draw is a pure function of its key, so results do not depend on the
order in which firms are processed and the per-firm draws can be evaluated
for a whole population in one vectorised call. The mixing function is the
SplitMix64 finaliser applied to each key word in turn.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "splitmix64-keyed-v1"

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0

# draw purposes
SHUFFLE_DEMOGRAPHY = 1
GROWTH = 2
CLOSURE_NOISE = 3
CLOSURE = 4
SPINOFF = 5
SPINOFF_SIZE = 6
SHUFFLE_RELOCATION = 7
RELOCATION_MODE = 8
TIE_BREAK = 9
ASSIGN = 10
SYNTH = 11


def _words(key) -> np.ndarray:
    a = np.asarray(key)
    if a.dtype == np.uint64:
        return a
    return a.astype(np.int64).view(np.uint64) if a.ndim else np.uint64(int(key) & _MASK)


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed: int, *keys):
    """64-bit hash of the key tuple; broadcasts over array keys."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(int(seed) & _MASK) + _GOLDEN)
        for k in keys:
            h = _mix(h ^ (_words(k) + _GOLDEN))
    return h


def uniform(seed: int, *keys):
    """Uniform draw(s) in [0, 1) with 53 random bits."""
    h = hash64(seed, *keys)
    u = (h >> np.uint64(11)).astype(np.float64) * _TWO53
    return float(u) if np.ndim(u) == 0 else u


def normal(seed: int, *keys):
    """Standard normal draw(s) by Box-Muller from two keyed uniforms."""
    u1 = uniform(seed, *keys, 0)
    u2 = uniform(seed, *keys, 1)
    z = np.sqrt(-2.0 * np.log1p(-np.asarray(u1))) * np.cos(2.0 * np.pi * np.asarray(u2))
    return float(z) if np.ndim(z) == 0 else z


def shuffled_order(seed: int, year: int, purpose: int, ids: np.ndarray) -> np.ndarray:
    """Indices that order ``ids`` by their keyed hash (a seeded shuffle)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    h = hash64(seed, year, ids, purpose)
    return np.lexsort((ids, h))


class Stream:
    """Sequential view of one keyed substream.

    Implements the subset of :class:`numpy.random.Generator` used by the
    scalar model operations (``random``, ``normal``, ``lognormal``), so either
    can be passed where an ``rng`` is expected.
    """

    def __init__(self, seed: int, *keys):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self.counter = 0

    def _next(self) -> tuple:
        c = self.counter
        self.counter += 1
        return (*self.keys, c)

    def random(self) -> float:
        return uniform(self.seed, *self._next())

    def normal(self, loc: float = 0.0, scale: float = 1.0) -> float:
        return loc + scale * normal(self.seed, *self._next())

    def lognormal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        return float(np.exp(mean + sigma * normal(self.seed, *self._next())))
