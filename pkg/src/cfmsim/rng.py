"""Counter-based 64-bit random numbers.

Every random quantity in the package comes from this module, never from the
platform generator, so fixtures are reproducible in any language.

Algorithm
---------
``mix64`` is the SplitMix64 output finalizer::

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

All arithmetic is modulo 2**64. With ``G = 0x9E3779B97F4A7C15``:

* ``derive_key(seed, p1, ..., pk)``: ``k = mix64(seed + G)``, then for each
  path element ``k = mix64(k ^ mix64(p + G))``.
* ``draw(key, c) = mix64(key + (c + 1) * G)``, i.e. output ``c`` of a
  SplitMix64 sequence whose state starts at ``key``.
* ``uniform = (draw >> 11) * 2**-53``, in ``[0, 1)``.

Because a draw is a pure function of ``(key, counter)``, independent
substreams are obtained by deriving keys rather than by advancing shared
state; results do not depend on evaluation order.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / (1 << 53)


def _as_u64(a) -> np.ndarray:
    if isinstance(a, (int, np.integer)):
        return np.array([int(a) & MASK64], dtype=np.uint64)
    return np.atleast_1d(np.asarray(a).astype(np.uint64))


def mix64(z) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on uint64 arrays."""
    z = _as_u64(z).copy()
    z ^= z >> _S30
    z *= _C1
    z ^= z >> _S27
    z *= _C2
    z ^= z >> _S31
    return z


def derive_key(seed, *path) -> np.ndarray:
    """Key for the substream addressed by ``seed`` and a path of integers.

    Path elements may be arrays; the result broadcasts over them.
    """
    k = mix64(_as_u64(seed) + _G)
    for p in path:
        k = mix64(k ^ mix64(_as_u64(p) + _G))
    return k


def draw_u64(key, counter) -> np.ndarray:
    key = _as_u64(key)
    counter = _as_u64(counter)
    return mix64(key + (counter + _ONE) * _G)


def uniform(key, counter) -> np.ndarray:
    return (draw_u64(key, counter) >> _S11).astype(np.float64) * _INV53


def _scalar_key(key) -> int:
    k = _as_u64(key)
    if k.size != 1:
        raise ValueError("expected a single key")
    return int(k[0])


class Stream:
    """Sequential reader over one substream.

    Keeps only a counter; ``Stream(k).uniform(3)`` and three single draws
    from a fresh ``Stream(k)`` give identical numbers.
    """

    def __init__(self, key):
        self.key = _scalar_key(key)
        self.counter = 0

    def u64(self, n: int) -> np.ndarray:
        c = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return draw_u64(self.key, c)

    def uniform(self, n: int | None = None):
        if n is None:
            return float(self.uniform(1)[0])
        return (self.u64(n) >> _S11).astype(np.float64) * _INV53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def integer(self, high: int) -> int:
        """Integer in ``[0, high)`` as ``floor(u * high)``."""
        return min(int(self.uniform() * high), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for idx, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[idx] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def standard_normal(keys) -> np.ndarray:
    """One Box-Muller normal per key, from counters 0 and 1 of that key."""
    keys = _as_u64(keys)
    u1 = uniform(keys, 0)
    u2 = uniform(keys, 1)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


def poisson(lam, keys) -> np.ndarray:
    """One Poisson variate per (rate, key) pair.

    Rates below 10 use sequential-search inversion with a single uniform.
    Larger rates use Hormann's transformed rejection (PTRS), consuming
    counters two at a time until acceptance.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    keys = np.broadcast_to(_as_u64(keys), lam.shape).copy()
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson rate must be finite and nonnegative")
    out = np.zeros(lam.shape, dtype=np.int64)

    small = (lam > 0) & (lam < 10)
    if np.any(small):
        ls = lam[small]
        u = uniform(keys[small], 0)
        k = np.zeros(ls.shape, dtype=np.int64)
        p = np.exp(-ls)
        cdf = p.copy()
        active = u > cdf
        while np.any(active):
            k[active] += 1
            p[active] *= ls[active] / k[active]
            cdf[active] += p[active]
            active &= (u > cdf) & (p > 0)
        out[small] = k

    big = lam >= 10
    if np.any(big):
        out[big] = _ptrs(lam[big], keys[big])
    return out


def _ptrs(lam: np.ndarray, keys: np.ndarray) -> np.ndarray:
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)

    result = np.zeros(lam.shape, dtype=np.int64)
    pending = np.ones(lam.shape, dtype=bool)
    counter = 0
    while np.any(pending):
        idx = np.nonzero(pending)[0]
        U = uniform(keys[idx], counter) - 0.5
        V = uniform(keys[idx], counter + 1)
        counter += 2
        us = 0.5 - np.abs(U)
        k = np.floor((2.0 * a[idx] / us + b[idx]) * U + lam[idx] + 0.43)

        quick = (us >= 0.07) & (V <= vr[idx])
        reject = (k < 0) | ((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[idx]) - np.log(a[idx] / (us * us) + b[idx])
            rhs = -lam[idx] + k * loglam[idx] - gammaln(k + 1.0)
        accept = quick | (~reject & (lhs <= rhs))
        done = idx[accept]
        result[done] = k[accept].astype(np.int64)
        pending[done] = False
    return result
