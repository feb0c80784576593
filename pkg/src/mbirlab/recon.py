"""Reconstruction with learned priors: dictionary, union-of-transforms,
and plug-and-play half-quadratic splitting.

All solvers alternate a patch-domain model step with a quadratic image
update solved by warm-started conjugate gradients.  CG started from the
previous iterate can only lower its quadratic, and each model step is
an exact (or per-atom exact) minimizer, so the traced objectives come
out monotone without any safeguarding.
"""

from dataclasses import dataclass

import numpy as np

from .cnn import ConvNetParams, cnn_forward
from .core import Image, LinearOperator, cg_solve, hard_threshold
from .errors import ConfigError, ShapeError
from .learning import (Dictionary, Transform, UnionTransformModel,
                       assign_clusters, soup_code_sweep)
from .patches import (PatchConfig, coverage_counts, extract_patches,
                      patch_count, scatter_patches)


@dataclass
class ReconConfig:
    """Knobs shared by the learned-prior solvers.

    ``gamma_per_patch`` overrides the scalar sparsity level patch by
    patch where a solver supports it; ``tau`` weights each patch's
    regularizer term (all ones when omitted).  ``seed`` is carried for
    config echo only; the solvers themselves are deterministic.
    """

    beta: float
    gamma: float
    patches: PatchConfig
    gamma_per_patch: np.ndarray | None = None
    tau: np.ndarray | None = None
    outer_iters: int = 20
    cg_tol: float = 1e-8
    cg_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be nonnegative")
        if self.outer_iters < 0:
            raise ConfigError("outer_iters must be nonnegative")
        if self.gamma_per_patch is not None:
            g = np.asarray(self.gamma_per_patch, dtype=np.float64)
            if g.ndim != 1 or np.any(g < 0):
                raise ConfigError("gamma_per_patch must be a nonnegative "
                                  "vector")
            self.gamma_per_patch = g
        if self.tau is not None:
            t = np.asarray(self.tau, dtype=np.float64)
            if t.ndim != 1 or np.any(t < 0):
                raise ConfigError("tau must be a nonnegative vector")
            self.tau = t


def _weights_of(meas, require=False):
    if meas.weights is None:
        if require:
            raise ConfigError("measurement weights are required here")
        return np.ones(meas.y.size)
    return meas.weights


def _patch_vector(value, n_patches, name):
    """Broadcast a scalar or check a per-patch vector."""
    if value is None:
        return None
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n_patches, float(arr))
    if arr.shape != (n_patches,):
        raise ShapeError(f"{name} must have one entry per patch "
                         f"({n_patches}), got {arr.shape}")
    return arr


def recon_dictionary(meas, A: LinearOperator, D: Dictionary,
                     cfg: ReconConfig, x0: Image, trace=None) -> Image:
    """Weighted least squares with a pre-learned synthesis dictionary.

    Alternates sparse coding of the current patches (two sequential
    per-atom thresholding passes against the fixed atoms) with the
    image update (A^T W A + beta sum_j P_j^T P_j) x = A^T W y +
    beta sum_j P_j^T D z_j solved by CG.  The l0 penalty weight per
    patch is gamma_j, so the per-coefficient threshold is sqrt(gamma_j).
    """
    m = cfg.patches.patch_rows * cfg.patches.patch_cols
    if D.atoms.shape[0] != m:
        raise ShapeError(f"dictionary atom length {D.atoms.shape[0]} does "
                         f"not match patch size {m}")
    if meas.y.size != A.out_dim or x0.data.size != A.in_dim:
        raise ShapeError("measurement or image size does not match A")
    W = _weights_of(meas)
    dims = (x0.rows, x0.cols, x0.frames)
    N = patch_count(x0.rows, x0.cols, cfg.patches) * x0.frames
    gammas = _patch_vector(cfg.gamma_per_patch, N, "gamma_per_patch")
    if gammas is None:
        gammas = np.full(N, cfg.gamma)
    thresholds = np.sqrt(gammas)
    counts = np.tile(coverage_counts(dims, cfg.patches), x0.frames)
    Aty = A.adjoint(W * meas.y)

    def lhs(v):
        return A.adjoint(W * A.apply(v)) + cfg.beta * counts * v

    x = x0.data.copy()
    Z = np.zeros((D.n_atoms, N))
    for it in range(cfg.outer_iters):
        P = extract_patches(Image(*dims, x), cfg.patches)
        soup_code_sweep(P, D.atoms, Z, thresholds, passes=2)
        rhs = Aty + cfg.beta * scatter_patches(D.atoms @ Z, dims, cfg.patches)
        x = cg_solve(lhs, rhs, tol=cfg.cg_tol, max_iters=cfg.cg_iters, x0=x)
        if trace is not None:
            r = A.apply(x) - meas.y
            data = float(r @ (W * r))
            Pn = extract_patches(Image(*dims, x), cfg.patches)
            fit = np.sum((Pn - D.atoms @ Z) ** 2)
            reg = cfg.beta * float(fit + gammas @ (Z != 0).sum(axis=0))
            trace.record(it + 1, data + reg, data, reg)
    return x0.copy_with(x)


def _union_cost(P, model, labels, codes, gamma, tau):
    """Regularizer value sum_j tau_j (||O_k p_j - z_j||^2 + g^2 |z_j|_0).

    Because codes are exact thresholds of O_k p_j, each column's value
    collapses to sum_i min((O_k p_j)_i^2, gamma^2).
    """
    total = 0.0
    for k, t in enumerate(model.transforms):
        mask = labels == k
        if np.any(mask):
            T = t.omega @ np.ascontiguousarray(P[:, mask])
            col = np.minimum(T ** 2, gamma ** 2).sum(axis=0)
            total += float(tau[mask] @ col)
    return total


def recon_pwls_ultra(meas, A: LinearOperator, model: UnionTransformModel,
                     cfg: ReconConfig, x0: Image, trace=None):
    """Penalized weighted least squares with a union-of-transforms prior.

    Each outer iteration clusters and codes the current patches exactly
    (per column: best transform and hard-thresholded coefficients),
    then updates the image by CG on the normal equations
    (A^T W A + beta sum_j tau_j P_j^T P_j) x =
    A^T W y + beta sum_j tau_j P_j^T O_{k_j}^T z_j,
    using that the transforms are unitary.  Returns the image and the
    clustering of its patches.  The traced objective includes the inner
    minimization over codes and labels, so it is the true variational
    cost at each iterate and comes out nonincreasing.
    """
    W = _weights_of(meas, require=True)
    if meas.y.size != A.out_dim or x0.data.size != A.in_dim:
        raise ShapeError("measurement or image size does not match A")
    dims = (x0.rows, x0.cols, x0.frames)
    N = patch_count(x0.rows, x0.cols, cfg.patches) * x0.frames
    tau = _patch_vector(cfg.tau, N, "tau")
    if tau is None:
        tau = np.ones(N)
    wcov = scatter_patches(
        np.broadcast_to(tau, (model.n, N)).copy(), dims, cfg.patches)
    Aty = A.adjoint(W * meas.y)

    def lhs(v):
        return A.adjoint(W * A.apply(v)) + cfg.beta * wcov * v

    x = x0.data.copy()
    assignment = None
    for it in range(cfg.outer_iters + 1):
        P = extract_patches(Image(*dims, x), cfg.patches)
        assignment, codes = assign_clusters(model, P, gamma=cfg.gamma)
        if trace is not None:
            r = A.apply(x) - meas.y
            data = float(r @ (W * r))
            reg = cfg.beta * _union_cost(P, model, assignment.labels, codes,
                                         cfg.gamma, tau)
            trace.record(it, data + reg, data, reg)
        if it == cfg.outer_iters:
            break
        target = np.empty_like(codes)
        for k, t in enumerate(model.transforms):
            mask = assignment.labels == k
            if np.any(mask):
                target[:, mask] = t.omega.T @ np.ascontiguousarray(
                    codes[:, mask])
        rhs = Aty + cfg.beta * scatter_patches(tau * target, dims,
                                               cfg.patches)
        x = cg_solve(lhs, rhs, tol=cfg.cg_tol, max_iters=cfg.cg_iters, x0=x)
    return x0.copy_with(x), assignment


def recon_transform(meas, A: LinearOperator, transform: Transform,
                    cfg: ReconConfig, x0: Image, trace=None) -> Image:
    """Single-transform special case, written without the clustering
    machinery: codes are one hard threshold, the target one rotation.

    Kept as an independent straight-line path; the union solver with
    K=1 must reproduce its iterates bit for bit.
    """
    W = _weights_of(meas, require=True)
    if meas.y.size != A.out_dim or x0.data.size != A.in_dim:
        raise ShapeError("measurement or image size does not match A")
    omega = transform.omega
    dims = (x0.rows, x0.cols, x0.frames)
    N = patch_count(x0.rows, x0.cols, cfg.patches) * x0.frames
    tau = _patch_vector(cfg.tau, N, "tau")
    if tau is None:
        tau = np.ones(N)
    wcov = scatter_patches(
        np.broadcast_to(tau, (transform.n, N)).copy(), dims, cfg.patches)
    Aty = A.adjoint(W * meas.y)

    def lhs(v):
        return A.adjoint(W * A.apply(v)) + cfg.beta * wcov * v

    x = x0.data.copy()
    for it in range(cfg.outer_iters + 1):
        P = extract_patches(Image(*dims, x), cfg.patches)
        T = omega @ P
        codes = hard_threshold(T, cfg.gamma)
        if trace is not None:
            r = A.apply(x) - meas.y
            data = float(r @ (W * r))
            col = np.minimum(T ** 2, cfg.gamma ** 2).sum(axis=0)
            reg = cfg.beta * float(tau @ col)
            trace.record(it, data + reg, data, reg)
        if it == cfg.outer_iters:
            break
        target = omega.T @ codes
        rhs = Aty + cfg.beta * scatter_patches(tau * target, dims,
                                               cfg.patches)
        x = cg_solve(lhs, rhs, tol=cfg.cg_tol, max_iters=cfg.cg_iters, x0=x)
    return x0.copy_with(x)


@dataclass
class Denoiser:
    """Image-to-image denoiser with a noise-level input.

    Kinds: ``transform_threshold`` hard-thresholds patch coefficients
    under a unitary transform at gamma * sigma_hat and averages the
    overlapping patches back (a zero threshold keeps every coefficient,
    so that case returns the input untouched rather than paying the
    round trip); ``median`` is a 3x3 median filter with reflected
    edges; ``convnet`` applies a trained residual net.  Only the first
    kind uses sigma_hat.
    """

    kind: str
    transform: Transform | None = None
    gamma: float = 0.0
    patches: PatchConfig | None = None
    net: ConvNetParams | None = None

    def __post_init__(self):
        if self.kind not in ("transform_threshold", "median", "convnet"):
            raise ConfigError(f"unknown denoiser kind {self.kind!r}")
        if self.kind == "transform_threshold":
            if self.transform is None:
                raise ConfigError("transform_threshold needs a transform")
            if self.gamma < 0:
                raise ConfigError("gamma must be nonnegative")
            if self.patches is None:
                side = int(round(np.sqrt(self.transform.n)))
                if side * side != self.transform.n:
                    raise ConfigError("cannot infer patch shape from a "
                                      "non-square transform size")
                self.patches = PatchConfig(side, side)
        if self.kind == "convnet" and self.net is None:
            raise ConfigError("convnet denoiser needs net parameters")

    def apply(self, image: Image, sigma_hat: float) -> Image:
        if self.kind == "transform_threshold":
            thr = self.gamma * sigma_hat
            if thr == 0.0:
                return image
            omega = self.transform.omega
            P = extract_patches(image, self.patches)
            C = hard_threshold(omega @ P, thr)
            dims = (image.rows, image.cols, image.frames)
            acc = scatter_patches(omega.T @ C, dims, self.patches)
            counts = np.tile(coverage_counts(dims, self.patches),
                             image.frames)
            return image.copy_with(
                np.where(counts > 0, acc / np.maximum(counts, 1.0), 0.0))
        if self.kind == "median":
            return _median3(image)
        return cnn_forward(self.net, image)


def _median3(image: Image) -> Image:
    out = np.empty((image.frames, image.rows, image.cols))
    for f in range(image.frames):
        xp = np.pad(image.frame(f), 1, mode="reflect")
        stack = np.stack([xp[i:i + image.rows, j:j + image.cols]
                          for i in range(3) for j in range(3)])
        out[f] = np.median(stack, axis=0)
    return image.copy_with(out.ravel())


@dataclass
class HqsSchedule:
    """Half-quadratic splitting penalty schedule alpha_k = alpha0 *
    growth^k, with the regularizer weight beta setting the denoiser
    noise level sqrt(alpha_k / beta)."""

    alpha0: float
    beta: float
    growth: float = 1.3

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ConfigError("alpha0 must be positive")
        if self.growth <= 1:
            raise ConfigError("growth must exceed 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")

    def alpha(self, k: int) -> float:
        return self.alpha0 * self.growth ** k


def pnp_hqs(meas, A: LinearOperator, den: Denoiser, sched: HqsSchedule,
            iters: int, x0: Image, cg_tol=1e-8, cg_iters=200,
            trace=None) -> Image:
    """Plug-and-play reconstruction by half-quadratic splitting.

    Iteration k solves (A^T A + alpha_k I) x = A^T y + alpha_k z_k by
    CG and then replaces the z-minimization with a denoising step at
    noise level sqrt(alpha_k / beta).  The final denoise would never
    reach the returned image, so it is skipped.
    """
    if meas.y.size != A.out_dim or x0.data.size != A.in_dim:
        raise ShapeError("measurement or image size does not match A")
    Aty = A.adjoint(meas.y)
    x = x0.data.copy()
    z = x0.data.copy()
    for k in range(iters):
        a = sched.alpha(k)

        def lhs(v, a=a):
            return A.adjoint(A.apply(v)) + a * v

        x = cg_solve(lhs, Aty + a * z, tol=cg_tol, max_iters=cg_iters, x0=x)
        if trace is not None:
            r = A.apply(x) - meas.y
            data = float(r @ r)
            coupling = a * float(np.sum((x - z) ** 2))
            trace.record(k + 1, data + coupling, data, coupling)
        if k < iters - 1:
            z = den.apply(x0.copy_with(x), np.sqrt(a / sched.beta)).data
    return x0.copy_with(x)
