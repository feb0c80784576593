"""Classical regularized reconstruction: FISTA for analysis-form l1,
edge-preserving PWLS, singular value thresholding, low-rank plus sparse
decomposition, and structured low-rank spectrum completion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (Image, LinearOperator, operator_norm_sq, soft_threshold,
                   svd)
from .errors import ConfigError, ShapeError
from .forward import Measurements

_ORTHO_PROBES = 3


def _check_orthonormal(op, tol=1e-8, seed=101):
    """Probe W^H W = I; analysis operators here must be orthonormal."""
    rng = np.random.default_rng(seed)
    for _ in range(_ORTHO_PROBES):
        x = rng.standard_normal(op.in_dim)
        if op.field == "complex":
            x = x + 1j * rng.standard_normal(op.in_dim)
        back = op.adjoint(op.apply(x))
        if np.linalg.norm(back - x) > tol * max(1.0, np.linalg.norm(x)):
            raise ConfigError("analysis operator is not orthonormal "
                              "(W^H W x != x beyond 1e-8)")


def fista_analysis_l1(meas: Measurements, A: LinearOperator,
                      Wt: LinearOperator, beta, iters, x0: Image,
                      trace=None) -> Image:
    """FISTA on 0.5 ||A x - y||^2 + beta ||Wt x||_1.

    Wt must be orthonormal so the proximal step has the closed form
    Wt^H o soft o Wt.  The step size is 0.95 over a power-iteration
    estimate of ||A||^2.  The iterate after the final proximal step is
    returned; the recorded objective need not be monotone (momentum) but
    ends at or below its starting value.
    """
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    if A.in_dim != x0.data.size or Wt.in_dim != x0.data.size:
        raise ShapeError("operator dims do not match x0")
    _check_orthonormal(Wt)
    y = meas.y
    L = operator_norm_sq(A, iters=50, seed=0)
    if L <= 0:
        raise ConfigError("operator norm estimate is zero")
    step = 0.95 / L

    def prox(v, tau):
        return np.real(Wt.adjoint(soft_threshold(Wt.apply(v), tau)))

    x = x0.data.copy()
    z = x.copy()
    t = 1.0
    if trace is not None:
        r = A.apply(x) - y
        d = 0.5 * float(np.real(np.vdot(r, r)))
        reg = beta * float(np.sum(np.abs(Wt.apply(x))))
        trace.record(0, d + reg, d, reg)
    for k in range(iters):
        grad = np.real(A.adjoint(A.apply(z) - y))
        x_new = prox(z - step * grad, step * beta)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if trace is not None:
            r = A.apply(x) - y
            d = 0.5 * float(np.real(np.vdot(r, r)))
            reg = beta * float(np.sum(np.abs(Wt.apply(x))))
            trace.record(k + 1, d + reg, d, reg)
    return x0.copy_with(x)


@dataclass
class EdgeRegConfig:
    """Hyperbola potential sqrt(z^2 + delta^2) on first differences."""

    beta: float
    delta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")


def _diff_ops(rows, cols):
    def dv(img):
        return img[1:, :] - img[:-1, :]

    def dh(img):
        return img[:, 1:] - img[:, :-1]

    return dv, dh


def edge_reg_value_grad(x_img, cfg: EdgeRegConfig):
    """Regularizer value and gradient for a 2-D array."""
    dv, dh = _diff_ops(*x_img.shape)
    gv = dv(x_img)
    gh = dh(x_img)
    val = float(np.sum(np.sqrt(gv ** 2 + cfg.delta ** 2))
                + np.sum(np.sqrt(gh ** 2 + cfg.delta ** 2)))
    pv = gv / np.sqrt(gv ** 2 + cfg.delta ** 2)
    ph = gh / np.sqrt(gh ** 2 + cfg.delta ** 2)
    grad = np.zeros_like(x_img)
    grad[1:, :] += pv
    grad[:-1, :] -= pv
    grad[:, 1:] += ph
    grad[:, :-1] -= ph
    return val, grad


def pwls_ep(meas: Measurements, A: LinearOperator, cfg: EdgeRegConfig,
            iters, x0: Image, trace=None) -> Image:
    """Gradient descent with backtracking on the edge-preserving PWLS cost

        sum_i w_i (y_i - [Ax]_i)^2 + beta sum_l sqrt((D x)_l^2 + delta^2)

    with horizontal and vertical first differences.  Backtracking keeps
    the cost monotone nonincreasing.
    """
    if meas.weights is None:
        raise ConfigError("pwls_ep needs statistical weights")
    if x0.frames != 1:
        raise ShapeError("pwls_ep expects a single frame")
    w = meas.weights
    y = meas.y
    rows, cols = x0.rows, x0.cols

    def cost_grad(xv):
        r = A.apply(xv) - y
        data = float(np.dot(w * r, r))
        rval, rgrad = edge_reg_value_grad(xv.reshape(rows, cols), cfg)
        g = 2.0 * A.adjoint(w * r) + cfg.beta * rgrad.ravel()
        return data + cfg.beta * rval, data, cfg.beta * rval, g

    x = x0.data.copy()
    cost, data, reg, g = cost_grad(x)
    if trace is not None:
        trace.record(0, cost, data, reg)
    step = 1.0
    for k in range(iters):
        gnorm2 = float(g @ g)
        if gnorm2 == 0.0:
            break
        step *= 2.0
        accepted = False
        for _ in range(60):
            cand = x - step * g
            c_cost, c_data, c_reg, c_g = cost_grad(cand)
            if c_cost <= cost - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x, cost, data, reg, g = cand, c_cost, c_data, c_reg, c_g
        if trace is not None:
            trace.record(k + 1, cost, data, reg)
    return x0.copy_with(x)


def svt(M, tau):
    """Singular value soft thresholding U max(S - tau, 0) V^H."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    res = svd(M)
    s = np.maximum(res.S - tau, 0.0)
    return (res.U * s) @ res.V.conj().T


@dataclass
class LpsConfig:
    """Low-rank plus sparse decomposition settings.

    ``sparsifier`` must be orthonormal (identity by default); ``step``
    of None picks 0.95 / (2 ||A||^2), the safe bound for the joint
    smooth term.
    """

    lambda_l: float
    lambda_s: float
    iters: int = 100
    step: float | None = None
    sparsifier: LinearOperator | None = None

    def __post_init__(self):
        if self.lambda_l < 0 or self.lambda_s < 0:
            raise ConfigError("lambdas must be nonnegative")
        if self.iters < 0:
            raise ConfigError("iters must be nonnegative")
        if self.step is not None and self.step <= 0:
            raise ConfigError("step must be positive")


def lps_reconstruct(meas: Measurements, A: LinearOperator, cfg: LpsConfig,
                    x0: Image, trace=None):
    """Proximal gradient on the low-rank plus sparse objective

        0.5 ||A(xl + xs) - y||^2 + lambda_l ||Mat(xl)||_* +
        lambda_s ||W xs||_1

    where Mat stacks each frame as a column.  Returns (xl, xs) images.
    """
    if x0.frames < 2:
        raise ShapeError("low-rank plus sparse needs at least 2 frames")
    if A.in_dim != x0.data.size:
        raise ShapeError("operator does not match image stack size")
    W = cfg.sparsifier
    if W is not None:
        _check_orthonormal(W)
    L_est = operator_norm_sq(A, iters=50, seed=0)
    if cfg.step is None:
        # the smooth term couples the two blocks, so its Lipschitz
        # constant is 2 ||A||^2
        step = 0.95 / (2.0 * L_est) if L_est > 0 else 1.0
    else:
        if L_est > 0 and cfg.step > 1.0 / L_est:
            raise ConfigError("step exceeds 1 / ||A||^2 estimate")
        step = cfg.step
    y = meas.y
    shape = (x0.rows, x0.cols, x0.frames)
    npix = x0.rows * x0.cols

    def mat(v):
        return v.reshape(x0.frames, npix).T

    def unmat(M):
        return M.T.ravel()

    xl = np.zeros(x0.data.size)
    xs = np.zeros(x0.data.size)

    def objective(vl, vs):
        r = A.apply(vl + vs) - y
        d = 0.5 * float(np.real(np.vdot(r, r)))
        nuc = float(np.sum(np.linalg.svd(mat(vl), compute_uv=False)))
        s_vec = W.apply(vs) if W is not None else vs
        l1 = float(np.sum(np.abs(s_vec)))
        return d + cfg.lambda_l * nuc + cfg.lambda_s * l1, d, \
            cfg.lambda_l * nuc + cfg.lambda_s * l1

    if trace is not None:
        c, d, r = objective(xl, xs)
        trace.record(0, c, d, r)
    for k in range(cfg.iters):
        g = np.real(A.adjoint(A.apply(xl + xs) - y))
        xl = unmat(svt(mat(xl - step * g), step * cfg.lambda_l))
        vs = xs - step * g
        if W is None:
            xs = soft_threshold(vs, step * cfg.lambda_s)
        else:
            xs = np.real(W.adjoint(soft_threshold(W.apply(vs),
                                                  step * cfg.lambda_s)))
        if trace is not None:
            c, d, r = objective(xl, xs)
            trace.record(k + 1, c, d, r)
    dims = (x0.rows, x0.cols, x0.frames)
    return (Image(*dims, xl), Image(*dims, xs))


def build_hankel(m, n, d):
    """(n - d + 1) x d Hankel matrix with entry (i, j) = m[i + j]."""
    m = np.asarray(m).ravel()
    if m.size != n:
        raise ShapeError(f"series length {m.size} != n = {n}")
    if not 1 <= d <= n:
        raise ConfigError(f"window d = {d} outside [1, {n}]")
    i = np.arange(n - d + 1)[:, None]
    j = np.arange(d)[None, :]
    return m[i + j]


def hankel_adjoint_average(Z, n, d):
    """Average the antidiagonals of Z back onto a length-n series."""
    k = (np.arange(n - d + 1)[:, None] + np.arange(d)[None, :]).ravel()
    counts = np.bincount(k, minlength=n)
    sums = (np.bincount(k, weights=Z.real.ravel(), minlength=n)
            + 1j * np.bincount(k, weights=Z.imag.ravel(), minlength=n))
    return sums / counts


@dataclass
class HankelConfig:
    n: int
    d: int
    sample_set: np.ndarray
    rho: float = 1.0
    iters: int = 300

    def __post_init__(self):
        if not 2 <= self.d <= self.n - 1:
            raise ConfigError(f"window d = {self.d} outside [2, n-1]")
        self.sample_set = np.unique(np.asarray(self.sample_set, dtype=int))
        if self.sample_set.size == 0:
            raise ConfigError("sample set is empty")
        if self.sample_set.min() < 0 or self.sample_set.max() >= self.n:
            raise ConfigError("sample indices outside [0, n)")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")


def hankel_complete(values, cfg: HankelConfig, trace=None):
    """ADMM for  min ||H(m)||_*  s.t.  m[k] = values[k] on the samples.

    ``values`` is a full-length vector read only on cfg.sample_set.  The
    equality constraint is enforced by assignment every iterate, so
    returned samples match bitwise.
    """
    values = np.asarray(values, dtype=complex).ravel()
    if values.size != cfg.n:
        raise ShapeError(f"expected length {cfg.n}, got {values.size}")
    omega = cfg.sample_set
    b = values[omega]
    m = np.zeros(cfg.n, dtype=complex)
    m[omega] = b
    Z = build_hankel(m, cfg.n, cfg.d).astype(complex)
    U = np.zeros_like(Z)
    for k in range(cfg.iters):
        Hm = build_hankel(m, cfg.n, cfg.d)
        Z = svt(Hm + U, 1.0 / cfg.rho)
        m = hankel_adjoint_average(Z - U, cfg.n, cfg.d)
        m[omega] = b
        U = U + build_hankel(m, cfg.n, cfg.d) - Z
        if trace is not None:
            nuc = float(np.sum(np.linalg.svd(build_hankel(m, cfg.n, cfg.d),
                                             compute_uv=False)))
            trace.record(k + 1, nuc, 0.0, nuc)
    return m
