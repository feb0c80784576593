"""Fixed orthonormal bases: DCT matrices, random rotations, one-level Haar."""

from __future__ import annotations

import numpy as np

from .core import LinearOperator
from .errors import ShapeError


def dct_matrix(n):
    """Orthonormal DCT-II matrix; rows are the basis functions."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    C = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    C *= np.sqrt(2.0 / n)
    C[0] /= np.sqrt(2.0)
    return C


def dct2_matrix(p):
    """Separable 2-D DCT acting on vectorized (row-major) p x p patches."""
    C = dct_matrix(p)
    return np.kron(C, C)


def dct_init(n):
    """Default transform init: 2-D DCT when n is a perfect square, else 1-D."""
    p = int(round(np.sqrt(n)))
    if p * p == n:
        return dct2_matrix(p)
    return dct_matrix(n)


def random_orthogonal(n, rng):
    """Haar-ish random rotation from QR of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def haar2_operator(rows, cols):
    """One-level 2-D orthonormal Haar transform as a square operator.

    Requires even dims.  Forward stacks the LL/LH/HL/HH bands; the
    adjoint is the exact inverse, so the operator is orthonormal.
    """
    if rows % 2 or cols % 2:
        raise ShapeError("haar transform needs even dims")
    s = 1.0 / np.sqrt(2.0)

    def fwd1(a, axis):
        lo = np.take(a, np.arange(0, a.shape[axis], 2), axis=axis)
        hi = np.take(a, np.arange(1, a.shape[axis], 2), axis=axis)
        return (lo + hi) * s, (lo - hi) * s

    def inv1(lo, hi, axis):
        out_shape = list(lo.shape)
        out_shape[axis] *= 2
        out = np.empty(out_shape)
        idx_even = [slice(None)] * lo.ndim
        idx_odd = [slice(None)] * lo.ndim
        idx_even[axis] = slice(0, None, 2)
        idx_odd[axis] = slice(1, None, 2)
        out[tuple(idx_even)] = (lo + hi) * s
        out[tuple(idx_odd)] = (lo - hi) * s
        return out

    def apply(x):
        a = np.asarray(x).reshape(rows, cols)
        lo_r, hi_r = fwd1(a, 0)
        ll, lh = fwd1(lo_r, 1)
        hl, hh = fwd1(hi_r, 1)
        return np.block([[ll, lh], [hl, hh]]).ravel()

    def adjoint(y):
        b = np.asarray(y).reshape(rows, cols)
        hr, hc = rows // 2, cols // 2
        ll, lh = b[:hr, :hc], b[:hr, hc:]
        hl, hh = b[hr:, :hc], b[hr:, hc:]
        lo_r = inv1(ll, lh, 1)
        hi_r = inv1(hl, hh, 1)
        return inv1(lo_r, hi_r, 0).ravel()

    return LinearOperator(rows * cols, rows * cols, apply, adjoint)
