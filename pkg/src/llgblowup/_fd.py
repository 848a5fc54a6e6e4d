"""Finite-difference stencils on non-uniform 1D grids."""
from __future__ import annotations

import numpy as np


def fornberg(x0: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights for derivatives 0..m at x0 from samples at nodes x.

    Fornberg's recursion; returns an array of shape (m+1, len(x)).
    """
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


class Stencil:
    """First and second derivative operators on a fixed grid.

    Interior rows use the three-point stencil.  The end rows are one-sided
    with five points, which keeps their error below the interior one.
    Rows act on differences f_j - f_i, so constants map to exactly zero.
    """

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        n = len(x)
        if n < 5:
            raise ValueError("grid too coarse: need at least 5 nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("grid must be strictly increasing")
        self.x = x
        idx = np.zeros((n, 5), dtype=int)
        w1 = np.zeros((n, 5))
        w2 = np.zeros((n, 5))
        for i in range(n):
            if i == 0:
                sl = [0, 1, 2, 3, 4]
            elif i == n - 1:
                sl = list(range(n - 5, n))
            else:
                sl = [i - 1, i, i + 1]
            c = fornberg(x[i], x[sl], 2)
            k = len(sl)
            idx[i, :k] = sl
            idx[i, k:] = sl[-1]
            w1[i, :k] = c[1]
            w2[i, :k] = c[2]
        self.idx, self.w1, self.w2 = idx, w1, w2

    def _apply(self, w, f, axis):
        f = np.moveaxis(np.asarray(f), axis, 0)
        g = np.einsum("ij,ij...->i...", w, f[self.idx] - f[:, None])
        return np.moveaxis(g, 0, axis)

    def d1(self, f, axis: int = 0):
        return self._apply(self.w1, f, axis)

    def d2(self, f, axis: int = 0):
        return self._apply(self.w2, f, axis)


def periodic_d1(f, h: float, axis: int = -1):
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)


def periodic_d2(f, h: float, axis: int = -1):
    return (np.roll(f, -1, axis=axis) - 2 * f + np.roll(f, 1, axis=axis)) / (h * h)
