"""Core numerical kernels shared by every solver in the package.

Images are stored flat in float64; operators are matrix-free pairs of
apply/adjoint callables acting on flat vectors.  Everything here is
deterministic: randomness enters only through explicit integer seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalBreakdownError, ShapeError


@dataclass
class Image:
    """A real 2-D grid, optionally a stack of temporal frames.

    ``data`` is flat, frame-major then row-major within a frame, with
    length rows * cols * frames.  Entries must be finite.
    """

    rows: int
    cols: int
    frames: int
    data: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.frames < 1:
            raise ShapeError("image dims must be positive, got "
                             f"{self.rows}x{self.cols}x{self.frames}")
        self.data = np.asarray(self.data, dtype=np.float64).ravel()
        if self.data.size != self.rows * self.cols * self.frames:
            raise ShapeError(
                f"data length {self.data.size} does not match "
                f"{self.rows}x{self.cols}x{self.frames}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image data contains non-finite entries")

    @classmethod
    def from_array(cls, arr):
        """Build an image from a (rows, cols) or (frames, rows, cols) array."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            return cls(arr.shape[0], arr.shape[1], 1, arr.ravel())
        if arr.ndim == 3:
            return cls(arr.shape[1], arr.shape[2], arr.shape[0], arr.ravel())
        raise ShapeError(f"expected 2-D or 3-D array, got ndim={arr.ndim}")

    @classmethod
    def zeros(cls, rows, cols, frames=1):
        return cls(rows, cols, frames, np.zeros(rows * cols * frames))

    def to_array(self):
        """Return (rows, cols) for a single frame, else (frames, rows, cols)."""
        if self.frames == 1:
            return self.data.reshape(self.rows, self.cols)
        return self.data.reshape(self.frames, self.rows, self.cols)

    def frame(self, i):
        n = self.rows * self.cols
        return self.data[i * n:(i + 1) * n].reshape(self.rows, self.cols)

    def frame_matrix(self):
        """Pixels-by-frames matrix: column t is frame t, row-major pixels."""
        return self.data.reshape(self.frames, self.rows * self.cols).T

    def copy_with(self, data):
        return Image(self.rows, self.cols, self.frames, np.array(data))


@dataclass
class LinearOperator:
    """Matrix-free linear map between flat vectors.

    ``apply`` maps length in_dim to length out_dim, ``adjoint`` the
    reverse.  ``field`` is "real" or "complex" and governs the probe
    vectors used by dot_test.
    """

    in_dim: int
    out_dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    field: str = "real"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError("operator dims must be positive")
        if self.field not in ("real", "complex"):
            raise ValueError(f"unknown field {self.field!r}")

    def __call__(self, x):
        return self.apply(x)


def identity_operator(n):
    return LinearOperator(n, n, lambda x: np.asarray(x).copy(),
                          lambda y: np.asarray(y).copy())


def matrix_operator(M):
    """Wrap a dense matrix as an operator; field follows the dtype."""
    M = np.asarray(M)
    fld = "complex" if np.iscomplexobj(M) else "real"
    return LinearOperator(M.shape[1], M.shape[0],
                          lambda x: M @ x,
                          lambda y: M.conj().T @ y,
                          field=fld)


def compose(a, b):
    """Operator x -> a(b(x))."""
    if b.out_dim != a.in_dim:
        raise ShapeError(f"cannot compose {a.in_dim} after {b.out_dim}")
    fld = "complex" if "complex" in (a.field, b.field) else "real"
    return LinearOperator(b.in_dim, a.out_dim,
                          lambda x: a.apply(b.apply(x)),
                          lambda y: b.adjoint(a.adjoint(y)),
                          field=fld)


def _probe(rng, n, fld):
    if fld == "complex":
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return rng.standard_normal(n)


def dot_test(op, trials=10, seed=0):
    """Largest normalized adjoint defect over random probe pairs.

    For each trial draws x, y and returns the maximum of
    |<Ax, y> - <x, A^H y>| / (||Ax|| ||y|| + ||x|| ||A^H y||).
    A correct adjoint pair stays at rounding level (<= 1e-6 in the
    contract); a wrong one is O(1).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = _probe(rng, op.in_dim, op.field)
        y = _probe(rng, op.out_dim, op.field)
        ax = op.apply(x)
        aty = op.adjoint(y)
        lhs = np.vdot(ax, y)
        rhs = np.vdot(x, aty)
        den = (np.linalg.norm(ax) * np.linalg.norm(y)
               + np.linalg.norm(x) * np.linalg.norm(aty))
        if den == 0.0:
            continue
        worst = max(worst, abs(lhs - rhs) / den)
    return worst


def operator_norm_sq(op, iters=50, seed=0):
    """Power-iteration estimate of ||A||^2 (largest eigenvalue of A^H A)."""
    rng = np.random.default_rng(seed)
    v = _probe(rng, op.in_dim, op.field)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(v))
        lam = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam


def soft_threshold(v, tau):
    """Soft thresholding; shrinks magnitudes, preserves phase for complex."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v)
    mag = np.abs(v)
    scale = np.maximum(mag - tau, 0.0)
    with np.errstate(invalid="ignore"):
        out = v * np.where(mag > 0, scale / np.where(mag > 0, mag, 1.0), 0.0)
    return out


def hard_threshold(v, gamma):
    """Zero entries with magnitude strictly below gamma; ties are kept."""
    if gamma < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v)
    return np.where(np.abs(v) >= gamma, v, 0.0)


@dataclass
class SvdResult:
    """Thin SVD M = U diag(S) V^H with orthonormal columns in U and V."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.S) @ self.V.conj().T


def svd(M):
    """Thin SVD of a dense matrix, singular values nonincreasing."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ValueError("svd input contains non-finite entries")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    return SvdResult(U, s, Vh.conj().T)


def cg_solve(normal_op, b, tol=1e-8, max_iters=200, x0=None, residuals=None):
    """Conjugate gradients for an SPD system given as apply(x) -> Ax.

    ``normal_op`` may be a LinearOperator or a bare callable.  Stops when
    ||r|| <= tol * ||b|| or at max_iters.  NaN in any iterate raises
    NumericalBreakdownError.  If ``residuals`` is a list the residual
    norm (including the initial one) is appended each iteration.
    """
    apply_op = normal_op.apply if hasattr(normal_op, "apply") else normal_op
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_op(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        bnorm = 1.0
    rnorm = np.linalg.norm(r)
    if residuals is not None:
        residuals.append(rnorm)
    if rnorm <= tol * bnorm:
        return x
    p = r.copy()
    rs = rnorm ** 2
    for _ in range(max_iters):
        ap = apply_op(p)
        pap = float(p @ ap)
        if not np.isfinite(pap):
            raise NumericalBreakdownError("non-finite curvature in cg_solve")
        if pap <= 0.0:
            # zero curvature on an SPD system means p is numerically null
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rnorm = np.linalg.norm(r)
        if not np.isfinite(rnorm):
            raise NumericalBreakdownError("non-finite residual in cg_solve")
        if residuals is not None:
            residuals.append(rnorm)
        if rnorm <= tol * bnorm:
            break
        rs_new = rnorm ** 2
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


class Trace:
    """Per-iteration rows a solver can record and dump as CSV."""

    def __init__(self, columns=("iter", "cost", "data_term", "reg_term")):
        self.columns = tuple(columns)
        self.rows = []

    def record(self, *values):
        if len(values) != len(self.columns):
            raise ShapeError(f"expected {len(self.columns)} values")
        self.rows.append(tuple(values))

    def costs(self):
        i = self.columns.index("cost")
        return [row[i] for row in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            writer.writerows([[repr(v) if isinstance(v, float) else v
                               for v in row] for row in self.rows])
