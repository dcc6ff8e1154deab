"""Exact 1-D total-variation proximal operator (Condat's direct algorithm).

``tv1d(v, lam)`` solves ``min_z 0.5 * ||z - v||^2 + lam * sum |z[k+1] - z[k]|``
exactly in linear time (worst case quadratic, rare in practice).
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _tv1d_inplace(inp, out, lam):
    n = inp.shape[0]
    if n == 0:
        return
    if lam <= 0.0:
        for i in range(n):
            out[i] = inp[i]
        return
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = inp[0] - lam
    vmax = inp[0] + lam
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k
                vmin = inp[k]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k
                vmax = inp[k]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return
        umin += inp[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kplus = k
            kminus = k
            vmin = inp[k]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += inp[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k
                kminus = k
                vmax = inp[k]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


@numba.njit(cache=True)
def _tv1d_rows(x, lam, out):
    for r in range(x.shape[0]):
        _tv1d_inplace(x[r], out[r], lam)


def tv1d(v, lam: float) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty_like(v)
    _tv1d_inplace(v, out, float(lam))
    return out


def tv1d_rows(x: np.ndarray, lam: float) -> np.ndarray:
    """Apply :func:`tv1d` independently to every row of a 2-D array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _tv1d_rows(x, float(lam), out)
    return out
