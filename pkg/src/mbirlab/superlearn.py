"""Greedy supervised-plus-unsupervised training and reconstruction.

A model here is a stack of denoising networks, one per layer, wrapped
around the union-of-transforms variational solver.  Reconstruction
runs layer by layer: the network maps the current estimate to a pin
image u, and the layer re-solves the variational problem with an extra
mu * ||x - u||^2 term.  Training is greedy: fit the layer's network on
(current estimate, reference) pairs, then run that layer's variational
solve to produce the next estimates.  Gradients never propagate
through the solver.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .cnn import ConvNetParams, cnn_forward, train_denoiser
from .core import Image, LinearOperator, cg_solve
from .errors import ConfigError, ShapeError
from .forward import build_radon, fbp
from .learning import UnionTransformModel, assign_clusters, learn_ultra
from .patches import extract_patches, patch_count, scatter_patches
from .recon import ReconConfig, _union_cost, _weights_of, _patch_vector

log = logging.getLogger(__name__)


@dataclass
class SuperModel:
    """Per-layer network weights plus the shared variational prior."""

    layers: list
    mu: float
    ultra: UnionTransformModel
    recon: ReconConfig

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("need at least one layer")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        for th in self.layers:
            if not isinstance(th, ConvNetParams):
                raise ConfigError("layers must hold network parameters")

    @property
    def L(self) -> int:
        return len(self.layers)


@dataclass
class UltraConfig:
    """How to learn the union of transforms before SUPER training."""

    K: int = 3
    learn_gamma: float = 0.1
    learn_iters: int = 20
    recon: ReconConfig = None

    def __post_init__(self):
        if self.K < 1 or self.learn_iters < 0:
            raise ConfigError("K must be >= 1 and learn_iters >= 0")
        if self.recon is None:
            raise ConfigError("an inner reconstruction config is required")


@dataclass
class CnnConfig:
    channels: int = 16
    epochs: int = 100
    lr: float = 0.02
    batch: int = 4

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")


def _layer_solve(meas, A, model: UnionTransformModel, cfg: ReconConfig,
                 mu, u, x0: Image, trace=None) -> Image:
    """One SUPER layer: the union-of-transforms solve with mu*||x-u||^2.

    Same alternation as the plain union solver; the pin only adds mu
    to the normal-equation diagonal and mu*u to the right-hand side.
    Zero mu skips those terms entirely so the decoupled case stays
    arithmetic-for-arithmetic identical to the plain solver.
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
        base = A.adjoint(W * A.apply(v)) + cfg.beta * wcov * v
        return base + mu * v if mu != 0 else base

    x = x0.data.copy()
    for it in range(cfg.outer_iters + 1):
        P = extract_patches(Image(*dims, x), cfg.patches)
        assignment, codes = assign_clusters(model, P, gamma=cfg.gamma)
        if trace is not None:
            r = A.apply(x) - meas.y
            data = float(r @ (W * r))
            reg = cfg.beta * _union_cost(P, model, assignment.labels, codes,
                                         cfg.gamma, tau)
            pin = mu * float(np.sum((x - u) ** 2)) if mu != 0 else 0.0
            trace.record(it, data + reg + pin, data, reg + pin)
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
        if mu != 0:
            rhs = rhs + mu * u
        x = cg_solve(lhs, rhs, tol=cfg.cg_tol, max_iters=cfg.cg_iters, x0=x)
    return x0.copy_with(x)


def super_reconstruct(meas, A: LinearOperator, model: SuperModel,
                      x0: Image, trace=None) -> Image:
    """Run the layered reconstruction: network pin, variational solve,
    repeat with the next layer's weights."""
    x = x0
    for theta in model.layers:
        u = cnn_forward(theta, x)
        x = _layer_solve(meas, A, model.ultra, model.recon, model.mu,
                         u.data, x, trace=trace)
    return x


def super_fixed_point_residual(meas, A: LinearOperator, model: SuperModel,
                               x_hat: Image) -> float:
    """Normalized defect of the shared-weights fixed-point equation.

    Requires every layer to carry the same weights.  Solves the
    variational problem once with the pin computed from x_hat and
    returns ||x_hat - solution|| / ||x_hat||.
    """
    ref = model.layers[0].as_vector()
    for th in model.layers[1:]:
        if not np.array_equal(th.as_vector(), ref):
            raise ConfigError("fixed-point residual needs shared weights "
                              "across layers")
    u = cnn_forward(model.layers[0], x_hat)
    sol = _layer_solve(meas, A, model.ultra, model.recon, model.mu,
                       u.data, x_hat)
    denom = float(np.linalg.norm(x_hat.data))
    if denom == 0.0:
        raise ConfigError("x_hat must be nonzero")
    return float(np.linalg.norm(x_hat.data - sol.data)) / denom


@dataclass
class TrainSet:
    """References with measurements for supervision, plus plain images
    for learning the unsupervised prior."""

    supervised: list = field(default_factory=list)
    unsupervised: list = field(default_factory=list)

    def __post_init__(self):
        for x, y in self.supervised:
            if not isinstance(x, Image):
                raise ConfigError("supervised entries are (Image, "
                                  "Measurements) pairs")

    @property
    def n_sup(self) -> int:
        return len(self.supervised)


def _mean_mse(theta, pairs):
    total = 0.0
    for xin, tgt in pairs:
        d = cnn_forward(theta, xin).data - tgt.data
        total += float(d @ d) / d.size
    return total / len(pairs)


def super_train(train: TrainSet, geom, L, mu, ultra_cfg: UltraConfig,
                cnn_cfg: CnnConfig, seed=0, stats=None) -> SuperModel:
    """Greedy layer-wise training against CT measurements.

    Learns the union of transforms from the unsupervised images' patches,
    initializes every supervised estimate by filtered backprojection,
    then per layer: fit the network on (estimate, reference) pairs and
    advance each estimate through that layer's variational solve.  A
    layer whose trained network fits worse than the zero net (identity)
    keeps the zero net instead, so a layer never hurts the training fit.
    ``stats``, if given, is a Trace with columns (layer, train_mse,
    mean_psnr) recording per-layer progress.
    """
    if train.n_sup == 0:
        raise ConfigError("supervised training needs at least one pair")
    patches_cfg = ultra_cfg.recon.patches
    cols = [extract_patches(img, patches_cfg) for img in train.unsupervised]
    if not cols:
        raise ConfigError("unsupervised images are required to learn the "
                          "prior")
    X = np.concatenate(cols, axis=1)
    ultra, _ = learn_ultra(X, ultra_cfg.K, ultra_cfg.learn_gamma,
                           ultra_cfg.learn_iters, seed=seed)
    A = build_radon(geom)
    radon = A
    estimates = [fbp(m, geom, radon=radon) for _, m in train.supervised]
    refs = [x for x, _ in train.supervised]
    layers = []
    for l in range(1, L + 1):
        pairs = list(zip(estimates, refs))
        theta = train_denoiser(pairs, epochs=cnn_cfg.epochs, lr=cnn_cfg.lr,
                               batch=cnn_cfg.batch, seed=seed + l,
                               channels=cnn_cfg.channels)
        mse = _mean_mse(theta, pairs)
        zero = ConvNetParams.zeros(cnn_cfg.channels)
        zero_mse = _mean_mse(zero, pairs)
        if mse > zero_mse:
            log.info("layer %d trained worse than identity (%.3e > %.3e); "
                     "keeping zero weights", l, mse, zero_mse)
            theta, mse = zero, zero_mse
        layers.append(theta)
        new_estimates = []
        for (ref, m), est in zip(train.supervised, estimates):
            u = cnn_forward(theta, est)
            new_estimates.append(_layer_solve(
                m, A, ultra, ultra_cfg.recon, mu, u.data, est))
        estimates = new_estimates
        if stats is not None:
            psnrs = []
            for ref, est in zip(refs, estimates):
                err = np.sqrt(np.mean((est.data - ref.data) ** 2))
                psnrs.append(20 * np.log10(float(ref.data.max()) / err)
                             if err > 0 else np.inf)
            stats.record(l, mse, float(np.mean(psnrs)))
    return SuperModel(layers, mu, ultra, ultra_cfg.recon)
