"""Splittable, counter-based uniform random streams.

A stream is a 64-bit key plus a draw counter. The n-th uniform of a stream
is a SplitMix64 finalizer applied to ``key + n * golden``, so draws are a
pure function of (key, n). Splitting derives two child keys by hashing the
parent key with a branch tag; a stream's key is therefore a function of the
root seed and the path of split decisions leading to it.
"""

from __future__ import annotations

from statistics import NormalDist

import numpy as np

ALGORITHM = "splitmix64-path-v1"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SPLIT_TAG = 0xD1B54A32D192ED03
_BRANCH_GAMMA = 0xA0761D6478BD642F
_UNIT = 2.0 ** -53
_STD_NORMAL = NormalDist()


def _mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _child_key(key, branch):
    return _mix64((_mix64(key ^ _SPLIT_TAG) + (branch + 1) * _BRANCH_GAMMA) & _MASK)


class RandomStream:
    """Deterministic stream of U[0, 1) draws that can be split into independent children.

    A stream should not be drawn from after it has been split: the children
    are derived from the key alone, not from the draw counter.
    """

    __slots__ = ("key", "counter")

    algorithm = ALGORITHM

    def __init__(self, seed, path=()):
        key = _mix64((int(seed) & _MASK) ^ _GOLDEN)
        for branch in path:
            key = _child_key(key, int(branch))
        self.key = key
        self.counter = 0

    @classmethod
    def _from_key(cls, key):
        s = cls.__new__(cls)
        s.key = key
        s.counter = 0
        return s

    def next_uniform(self):
        self.counter += 1
        return (_mix64((self.key + self.counter * _GOLDEN) & _MASK) >> 11) * _UNIT

    def next_open_uniform(self):
        """A draw in the open interval (0, 1)."""
        return self.next_uniform() + 0.5 * _UNIT

    def next_normal(self):
        return _STD_NORMAL.inv_cdf(self.next_open_uniform())

    def normals(self, n):
        return [self.next_normal() for _ in range(n)]

    def split(self):
        return self.child(0), self.child(1)

    def child(self, branch):
        return RandomStream._from_key(_child_key(self.key, branch))

    def __repr__(self):
        return f"RandomStream(key={self.key:#018x}, counter={self.counter})"


def first_stream(z):
    """The stream to draw from when ``z`` may be a nested tuple of streams."""
    while isinstance(z, tuple):
        z = z[0]
    return z


def replicate_stream(seed, index):
    """Stream of replicate ``index`` under master seed ``seed``."""
    return RandomStream(seed, (index,))


# --------------------------------------------------------------------------
# the same arithmetic on arrays of keys (one stream per element)
# --------------------------------------------------------------------------

_U = np.uint64


def mix64_array(z):
    z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
    return z ^ (z >> _U(31))


def child_keys(keys, branch):
    """Keys of ``child(branch)`` for every stream in ``keys``; ``branch`` may be an array."""
    step = (np.atleast_1d(np.asarray(branch, dtype=np.uint64)) + _U(1)) * _U(_BRANCH_GAMMA)
    return mix64_array(mix64_array(keys ^ _U(_SPLIT_TAG)) + step)


def replicate_keys(seed, indices):
    """Keys of ``replicate_stream(seed, i)`` for every ``i`` in ``indices``."""
    root = _mix64((int(seed) & _MASK) ^ _GOLDEN)
    return child_keys(np.full(len(indices), root, dtype=np.uint64), np.asarray(indices, dtype=np.uint64))


def first_uniforms(keys):
    """The first ``next_uniform()`` of each fresh stream."""
    return (mix64_array(keys + _U(_GOLDEN)) >> _U(11)).astype(np.float64) * _UNIT
