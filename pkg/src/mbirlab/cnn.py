"""Small residual convolutional denoiser with hand-written backprop.

The architecture is fixed: conv(1->c, 3x3), ReLU, conv(c->c, 3x3),
ReLU, conv(c->1, 3x3), and the output adds the input back (residual
skip).  All convolutions are same-size with reflect padding.  Keeping
the net this small is the point: every gradient is written out by hand
and checkable against finite differences in float64.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import Image
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

_K = 3  # kernel side; reflect padding below hardcodes (_K - 1) // 2 = 1


@dataclass
class ConvNetParams:
    """Weights and biases of the fixed three-convolution residual net.

    Weight tensors are (out_ch, in_ch, 3, 3); biases are per output
    channel.  Total parameter count is 9c + c + 9c^2 + c + 9c + 1.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        c = self.w1.shape[0]
        shapes = {
            "w1": (c, 1, _K, _K), "b1": (c,),
            "w2": (c, c, _K, _K), "b2": (c,),
            "w3": (1, c, _K, _K), "b3": (1,),
        }
        for name, want in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != want:
                raise ShapeError(f"{name} must have shape {want}, "
                                 f"got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite entries")
            setattr(self, name, arr)

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f).size for f in
                   ("w1", "b1", "w2", "b2", "w3", "b3"))

    @classmethod
    def zeros(cls, channels=16):
        c = channels
        return cls(np.zeros((c, 1, _K, _K)), np.zeros(c),
                   np.zeros((c, c, _K, _K)), np.zeros(c),
                   np.zeros((1, c, _K, _K)), np.zeros(1))

    @classmethod
    def random(cls, channels=16, seed=0, scale=0.05):
        """Gaussian(0, scale) weights, zero biases."""
        rng = np.random.default_rng(seed)
        c = channels
        return cls(scale * rng.standard_normal((c, 1, _K, _K)), np.zeros(c),
                   scale * rng.standard_normal((c, c, _K, _K)), np.zeros(c),
                   scale * rng.standard_normal((1, c, _K, _K)), np.zeros(1))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in
                               ("w1", "b1", "w2", "b2", "w3", "b3")])

    @classmethod
    def from_vector(cls, channels, vec):
        c = channels
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [9 * c, c, 9 * c * c, c, 9 * c, 1]
        if vec.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, "
                             f"got {vec.size}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(c, 1, _K, _K), parts[1],
                   parts[2].reshape(c, c, _K, _K), parts[3],
                   parts[4].reshape(1, c, _K, _K), parts[5])

    def scaled_add(self, other, alpha):
        """self + alpha * other, elementwise over all parameters."""
        return ConvNetParams(*(getattr(self, f) + alpha * getattr(other, f)
                               for f in ("w1", "b1", "w2", "b2", "w3", "b3")))


def _reflect_indices(n):
    # np.pad mode="reflect" with width 1: [x1, x0..x_{n-1}, x_{n-2}]
    return np.concatenate(([1], np.arange(n), [n - 2]))


def _conv(x, w, b):
    """Same-size 3x3 correlation with reflect padding.

    x is (in_ch, H, W); returns (out_ch, H, W).
    """
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, (_K, _K), axis=(1, 2))
    return np.einsum("ocuv,chwuv->ohw", w, win) + b[:, None, None]


def _conv_backward(x, w, grad_out):
    """Gradients of _conv: returns (grad_w, grad_b, grad_x).

    The input gradient scatters through the padded array first and is
    then folded back through the reflection (padding is linear, its
    adjoint adds each pad row/column onto its mirror source).
    """
    cin, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, (_K, _K), axis=(1, 2))
    grad_w = np.einsum("ohw,chwuv->ocuv", grad_out, win)
    grad_b = grad_out.sum(axis=(1, 2))
    grad_xp = np.zeros_like(xp)
    for u in range(_K):
        for v in range(_K):
            grad_xp[:, u:u + H, v:v + W] += np.einsum(
                "oc,ohw->chw", w[:, :, u, v], grad_out)
    ih = _reflect_indices(H)
    iw = _reflect_indices(W)
    fold_h = np.zeros((cin, H, W + 2))
    np.add.at(fold_h, (slice(None), ih, slice(None)), grad_xp)
    grad_x = np.zeros((cin, H, W))
    np.add.at(grad_x, (slice(None), slice(None), iw), fold_h)
    return grad_w, grad_b, grad_x


def _forward_frame(theta, x2d):
    """Run one frame through the net; returns (output, cache)."""
    x = x2d[None]
    a1 = _conv(x, theta.w1, theta.b1)
    r1 = np.maximum(a1, 0.0)
    a2 = _conv(r1, theta.w2, theta.b2)
    r2 = np.maximum(a2, 0.0)
    a3 = _conv(r2, theta.w3, theta.b3)
    return x2d + a3[0], (x, a1, r1, a2, r2)


def _backward_frame(theta, cache, grad_out2d):
    """Gradients of _forward_frame w.r.t. parameters and the input."""
    x, a1, r1, a2, r2 = cache
    g3 = grad_out2d[None]
    gw3, gb3, gr2 = _conv_backward(r2, theta.w3, g3)
    ga2 = gr2 * (a2 > 0.0)
    gw2, gb2, gr1 = _conv_backward(r1, theta.w2, ga2)
    ga1 = gr1 * (a1 > 0.0)
    gw1, gb1, gx = _conv_backward(x, theta.w1, ga1)
    grads = ConvNetParams(gw1, gb1, gw2, gb2, gw3, gb3)
    # residual skip adds the output gradient straight onto the input's
    return grads, gx[0] + grad_out2d


def cnn_forward(theta: ConvNetParams, image: Image) -> Image:
    """Apply the residual net to every frame of an image."""
    out = np.empty((image.frames, image.rows, image.cols))
    for f in range(image.frames):
        out[f], _ = _forward_frame(theta, image.frame(f))
    return image.copy_with(out.ravel())


def cnn_backward(theta: ConvNetParams, image: Image, grad_out: Image):
    """Exact gradients of cnn_forward.

    Returns (grad_theta: ConvNetParams, grad_image: Image) for the
    scalar function whose image-space gradient is ``grad_out``.
    Parameter gradients accumulate over frames.
    """
    if (grad_out.rows, grad_out.cols, grad_out.frames) != \
            (image.rows, image.cols, image.frames):
        raise ShapeError("grad_out dims must match the input image")
    total = ConvNetParams.zeros(theta.channels)
    gx = np.empty((image.frames, image.rows, image.cols))
    for f in range(image.frames):
        _, cache = _forward_frame(theta, image.frame(f))
        grads, gxf = _backward_frame(theta, cache, grad_out.frame(f))
        total = total.scaled_add(grads, 1.0)
        gx[f] = gxf
    return total, image.copy_with(gx.ravel())


def train_denoiser(pairs, epochs, lr, batch, seed=0, channels=16,
                   init=None, trace=None):
    """Fit the residual net to (input, target) image pairs by SGD.

    Minimizes the mean over samples and pixels of (f(x) - t)^2 with
    momentum 0.9, seeded shuffling each epoch, and Gaussian(0, 0.05)
    weight init (zero biases).  ``init`` overrides the initial
    parameters.  The per-epoch loss should drift downward; a smoothed
    increase (window 5) is logged, not raised, since SGD wanders.
    """
    if lr <= 0:
        raise ConfigError("lr must be positive")
    if epochs < 0 or batch < 1:
        raise ConfigError("epochs must be >= 0 and batch >= 1")
    if not pairs:
        raise ConfigError("need at least one training pair")
    dims = (pairs[0][0].rows, pairs[0][0].cols, pairs[0][0].frames)
    for xin, tgt in pairs:
        if (xin.rows, xin.cols, xin.frames) != dims or \
                (tgt.rows, tgt.cols, tgt.frames) != dims:
            raise ShapeError("all pairs must share the same dims")
    rng = np.random.default_rng(seed)
    theta = ConvNetParams.random(channels, seed=seed) if init is None \
        else init
    vel = ConvNetParams.zeros(theta.channels)
    n = len(pairs)
    npix = dims[0] * dims[1] * dims[2]
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            grad = ConvNetParams.zeros(theta.channels)
            batch_loss = 0.0
            for i in idx:
                xin, tgt = pairs[i]
                out = cnn_forward(theta, xin)
                resid = out.data - tgt.data
                batch_loss += float(resid @ resid) / npix
                gout = xin.copy_with(2.0 * resid / (npix * len(idx)))
                gtheta, _ = cnn_backward(theta, xin, gout)
                grad = grad.scaled_add(gtheta, 1.0)
            vel = ConvNetParams(
                *(0.9 * getattr(vel, f) - lr * getattr(grad, f)
                  for f in ("w1", "b1", "w2", "b2", "w3", "b3")))
            theta = theta.scaled_add(vel, 1.0)
            epoch_loss += batch_loss
        losses.append(epoch_loss / n)
        if trace is not None:
            trace.record(epoch + 1, losses[-1], losses[-1], 0.0)
    if len(losses) > 5:
        kernel = np.ones(5) / 5.0
        smooth = np.convolve(losses, kernel, mode="valid")
        if np.any(np.diff(smooth) > 1e-12):
            log.info("smoothed training loss increased at some point; "
                     "final loss %.3e", losses[-1])
    return theta
