"""Data-driven sparse models learned by exact alternating minimization.

All learners share the same recipe: a sparse-coding step that is an
exact minimizer given the model (hard thresholding), and a model step
that is an exact minimizer given the codes (a Procrustes rotation or a
normalized rank-one fit).  Objectives therefore never increase, which
the tests check against recorded traces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import hard_threshold
from .errors import ConfigError, ShapeError
from .fixedbases import dct_init, random_orthogonal

log = logging.getLogger(__name__)


@dataclass
class Transform:
    """Square sparsifying transform; unitary ones satisfy W^T W = I."""

    omega: np.ndarray
    unitary: bool = True

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        n = self.omega.shape[0]
        if self.omega.ndim != 2 or self.omega.shape[1] != n:
            raise ShapeError("transform matrix must be square")
        if self.unitary:
            defect = np.abs(self.omega.T @ self.omega - np.eye(n)).max()
            if defect > 1e-8:
                raise ConfigError(
                    f"transform is not unitary (defect {defect:.2e})")

    @property
    def n(self):
        return self.omega.shape[0]


@dataclass
class Dictionary:
    """Overcomplete synthesis dictionary with unit-norm atoms."""

    atoms: np.ndarray
    codes: np.ndarray | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise ShapeError("atoms must form a matrix")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.abs(norms - 1.0).max() > 1e-10:
            raise ConfigError("dictionary atoms must have unit norm")
        if self.codes is not None:
            self.codes = np.asarray(self.codes, dtype=np.float64)
            if self.codes.shape[0] != self.atoms.shape[1]:
                raise ShapeError("codes row count must equal atom count")

    @property
    def n_atoms(self):
        return self.atoms.shape[1]


@dataclass
class UnionTransformModel:
    """A union of unitary transforms with a shared sparsity threshold."""

    transforms: list
    gamma: float

    def __post_init__(self):
        if not self.transforms:
            raise ConfigError("need at least one transform")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        n = self.transforms[0].n
        for t in self.transforms:
            if not t.unitary:
                raise ConfigError("union members must be unitary")
            if t.n != n:
                raise ShapeError("union members must share dimension")

    @property
    def K(self):
        return len(self.transforms)

    @property
    def n(self):
        return self.transforms[0].n


@dataclass
class ClusterAssignment:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ShapeError("labels must be a vector")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")


@dataclass
class MultiLayerModel:
    """Stacked unitary transforms applied to successive residuals."""

    layers: list
    gammas: list

    def __post_init__(self):
        if len(self.layers) != len(self.gammas):
            raise ConfigError("one gamma per layer required")
        if not self.layers:
            raise ConfigError("need at least one layer")
        for t in self.layers:
            if not t.unitary:
                raise ConfigError("layers must be unitary transforms")

    @property
    def L(self):
        return len(self.layers)


def procrustes_update(X, Z) -> Transform:
    """argmin over unitary O of ||O X - Z||_F.

    With svd(X Z^T) = (U, S, V) the minimizer is V U^T.  A rank
    deficient product still yields a valid rotation; it is just not
    unique, which gets flagged in the log.
    """
    M = np.asarray(X) @ np.asarray(Z).T
    U, s, Vh = np.linalg.svd(M)
    if s.size and (s.min() <= 1e-12 * max(s.max(), 1e-300)):
        # expected whenever codes have all-zero rows, so keep it quiet
        log.info("procrustes product is rank deficient; rotation not unique")
    return Transform(Vh.T @ U.T, unitary=True)


def _sparse_objective(T, Z, gamma):
    return float(np.sum((T - Z) ** 2)) + gamma ** 2 * int(np.count_nonzero(Z))


def learn_transform(X, gamma, iters, seed=0, trace=None):
    """Single square unitary transform learned from patch columns.

    Minimizes ||O X - Z||_F^2 + gamma^2 ||Z||_0 over unitary O and
    codes Z, starting from the DCT.  Returns (Transform, Z).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be n x S")
    n, S = X.shape
    if S < n:
        log.warning("fewer training columns (%d) than dimensions (%d)", S, n)
    omega = dct_init(n)
    Z = hard_threshold(omega @ X, gamma)
    for k in range(iters):
        Z = hard_threshold(omega @ X, gamma)
        if np.count_nonzero(Z):
            omega = procrustes_update(X, Z).omega
        if trace is not None:
            data = float(np.sum((omega @ X - Z) ** 2))
            reg = gamma ** 2 * int(np.count_nonzero(Z))
            trace.record(k + 1, data + reg, data, reg)
    return Transform(omega, unitary=True), Z


def assign_clusters(model: UnionTransformModel, X, gamma=None):
    """Exact per-column cluster labels and codes under the union model.

    Column i goes to the transform minimizing
    sum_j min((O_k x_i)_j^2, gamma^2); ties take the smallest k.
    Returns (ClusterAssignment, codes).
    """
    X = np.asarray(X, dtype=np.float64)
    g = model.gamma if gamma is None else gamma
    S = X.shape[1]
    costs = np.empty((model.K, S))
    prods = []
    for k, t in enumerate(model.transforms):
        T = t.omega @ X
        prods.append(T)
        costs[k] = np.minimum(T ** 2, g ** 2).sum(axis=0)
    labels = np.argmin(costs, axis=0)
    codes = np.empty_like(X)
    for k in range(model.K):
        mask = labels == k
        if np.any(mask):
            codes[:, mask] = hard_threshold(prods[k][:, mask], g)
    return ClusterAssignment(labels), codes


def learn_ultra(X, K, gamma, iters, seed=0, trace=None):
    """Union of transforms with clustering, alternated exactly.

    Initialization: seeded uniform labels, transform 0 the DCT and the
    rest seeded random rotations.  Each iteration reassigns every column
    (with codes) and then re-solves each cluster's Procrustes problem;
    empty clusters and all-zero code blocks keep their transform.
    Returns (UnionTransformModel, ClusterAssignment).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be n x S")
    if K < 1:
        raise ConfigError("K must be >= 1")
    n, S = X.shape
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, K, size=S)
    transforms = [Transform(dct_init(n), unitary=True)]
    for _ in range(K - 1):
        transforms.append(Transform(random_orthogonal(n, rng), unitary=True))
    model = UnionTransformModel(transforms, gamma)
    assignment = ClusterAssignment(labels)
    for it in range(iters):
        assignment, codes = assign_clusters(model, X)
        new_transforms = []
        for k, t in enumerate(model.transforms):
            mask = assignment.labels == k
            # boolean gathers come out F-ordered; force C layout so the
            # K=1 path multiplies bit-identically to learn_transform
            Xk = np.ascontiguousarray(X[:, mask])
            Ck = np.ascontiguousarray(codes[:, mask])
            if np.any(mask) and np.count_nonzero(Ck):
                new_transforms.append(procrustes_update(Xk, Ck))
            else:
                new_transforms.append(t)
        model = UnionTransformModel(new_transforms, gamma)
        if trace is not None:
            data = 0.0
            nnz = 0
            for k, t in enumerate(model.transforms):
                mask = assignment.labels == k
                if np.any(mask):
                    data += float(np.sum(
                        (t.omega @ X[:, mask] - codes[:, mask]) ** 2))
                    nnz += int(np.count_nonzero(codes[:, mask]))
            reg = gamma ** 2 * nnz
            trace.record(it + 1, data + reg, data, reg)
    return model, assignment


def learn_multilayer(X, L, gammas, iters, trace=None):
    """Stacked transforms, each sparsifying the previous layer's residual.

    Residuals follow R_1 = X, R_{l+1} = O_l R_l - Z_l, and the joint
    objective is sum_l ||O_l R_l - Z_l||_F^2 + gamma_l^2 ||Z_l||_0.
    One cycle visits the layers in order and updates each block (codes,
    then transform) to its exact joint minimizer, recomputing downstream
    residuals after every update.  Because residuals cascade, an inner
    layer's exact code step thresholds O_l R_l shifted by the mean of
    the back-rotated downstream codes, at gamma_l / sqrt(layers below);
    the transform step is the Procrustes solution against that same
    shifted target.  Purely local per-layer updates look simpler but
    can push the joint objective up through the cascade; the exact
    blocks keep it nonincreasing.  For the last layer (and so for L=1)
    the shift vanishes and the update is the familiar local one.
    Returns a MultiLayerModel.
    """
    X = np.asarray(X, dtype=np.float64)
    gammas = [float(g) for g in gammas]
    if len(gammas) != L:
        raise ConfigError(f"need {L} gammas, got {len(gammas)}")
    if any(g < 0 for g in gammas):
        raise ConfigError("gammas must be nonnegative")
    n = X.shape[0]
    omegas = [dct_init(n) for _ in range(L)]
    Zs = [np.zeros_like(X) for _ in range(L)]
    for cycle in range(iters):
        R = X
        total_data = 0.0
        total_reg = 0.0
        for l in range(L):
            V = omegas[l] @ R
            if l == L - 1:
                Zs[l] = hard_threshold(V, gammas[l])
                target = Zs[l]
            else:
                w = L - l
                # G = sum over q >= l of the back-rotated downstream
                # code stacks D_q (D_l = 0), built right to left
                G = np.zeros_like(X)
                for p in range(L - 1, l, -1):
                    G = omegas[p].T @ ((L - p) * Zs[p] + G)
                Dbar = G / w
                Zs[l] = hard_threshold(V - Dbar, gammas[l] / np.sqrt(w))
                target = Zs[l] + Dbar
            if np.count_nonzero(target):
                omegas[l] = procrustes_update(R, target).omega
            R_next = omegas[l] @ R - Zs[l]
            total_data += float(np.sum(R_next ** 2))
            total_reg += gammas[l] ** 2 * int(np.count_nonzero(Zs[l]))
            R = R_next
        if trace is not None:
            trace.record(cycle + 1, total_data + total_reg,
                         total_data, total_reg)
    return MultiLayerModel([Transform(om, unitary=True) for om in omegas],
                           gammas)


def soup_code_sweep(P, atoms, Zc, gammas, passes=1):
    """Sequential per-atom hard-threshold code updates against fixed atoms.

    ``gammas`` may be a scalar or per-column vector.  Updates Zc in
    place and returns it; every single update is an exact minimizer of
    the code objective, so the objective never increases.
    """
    R = P - atoms @ Zc
    for _ in range(passes):
        for j in range(atoms.shape[1]):
            d = atoms[:, j]
            E = R + np.outer(d, Zc[j])
            b = E.T @ d
            zj = np.where(np.abs(b) >= gammas, b, 0.0)
            R = E - np.outer(d, zj)
            Zc[j] = zj
    return Zc


def learn_dictionary_soup(X, lam, J, iters, seed=0, trace=None) -> Dictionary:
    """Sum of outer products dictionary learning.

    Minimizes ||X - D Z||_F^2 + lam^2 ||Z||_0 with unit-norm atoms by
    cycling over atoms: the code row update is a hard threshold of
    E^T d_j and the atom update the normalized E z_j; atoms with an
    all-zero code row stay put.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be m x S")
    if lam < 0:
        raise ConfigError("lam must be nonnegative")
    if J < 1:
        raise ConfigError("need at least one atom")
    m, S = X.shape
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((m, J))
    D /= np.linalg.norm(D, axis=0)
    Z = np.zeros((J, S))
    R = X - D @ Z
    for it in range(iters):
        for j in range(J):
            d = D[:, j]
            E = R + np.outer(d, Z[j])
            zj = hard_threshold(E.T @ d, lam)
            if np.count_nonzero(zj):
                dj = E @ zj
                dj /= np.linalg.norm(dj)
            else:
                dj = d
            D[:, j] = dj
            Z[j] = zj
            R = E - np.outer(dj, zj)
        if trace is not None:
            data = float(np.sum(R ** 2))
            reg = lam ** 2 * int(np.count_nonzero(Z))
            trace.record(it + 1, data + reg, data, reg)
    return Dictionary(D, Z)
