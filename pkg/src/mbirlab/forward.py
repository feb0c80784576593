"""Forward models: parallel-beam CT, masked Fourier sampling, blur.

The Radon operator uses exact pixel-ray intersection lengths.  For a ray
with unit normal (cos t, sin t) at signed offset u from a unit pixel's
center, the chord length has the closed form

    clip((h - |u|) / (|cos t| |sin t|), 0, 1/max(|cos t|, |sin t|)),
    h = (|cos t| + |sin t|) / 2,

which is the trapezoid profile of a square's shadow.  Axis-aligned rays
riding exactly on a pixel boundary credit half a unit to each neighbor,
so the mass of every ray equals its true path length through the grid.
Intersections are precomputed once per geometry; apply and adjoint are
bincount accumulations over the same (ray, pixel, length) triplets, so
the adjoint is exact by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Image, LinearOperator
from .errors import ConfigError, ShapeError


@dataclass
class Measurements:
    """Flat measurement vector with optional inverse-variance weights."""

    y: np.ndarray
    weights: np.ndarray | None = None
    operator_tag: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y).ravel()
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if self.weights.shape != self.y.shape:
                raise ShapeError("weights length does not match y")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class CtGeometry:
    rows: int
    cols: int
    n_views: int
    n_detectors: int

    def __post_init__(self):
        if min(self.rows, self.cols, self.n_views, self.n_detectors) < 1:
            raise ConfigError("geometry fields must be positive")
        diag = np.hypot(self.rows, self.cols)
        if self.n_detectors < diag:
            warnings.warn(
                f"{self.n_detectors} detectors span less than the image "
                f"diagonal ({diag:.1f} px); rays may miss corners")

    @property
    def angles(self):
        return np.arange(self.n_views) * (np.pi / self.n_views)


def _chords(u, ct, st):
    ac, as_ = abs(ct), abs(st)
    if min(ac, as_) < 1e-12:
        near = np.abs(np.abs(u) - 0.5) <= 1e-12
        inside = np.abs(u) < 0.5
        return np.where(near, 0.5, np.where(inside, 1.0, 0.0))
    h = 0.5 * (ac + as_)
    lmax = 1.0 / max(ac, as_)
    return np.clip((h - np.abs(u)) / (ac * as_), 0.0, lmax)


def build_radon(geom: CtGeometry) -> LinearOperator:
    """Exact-length parallel-beam projector over [0, pi)."""
    rows, cols = geom.rows, geom.cols
    px = np.arange(cols) - (cols - 1) / 2.0
    py = (rows - 1) / 2.0 - np.arange(rows)
    cx = np.tile(px, rows)
    cy = np.repeat(py, cols)
    t = np.arange(geom.n_detectors) - (geom.n_detectors - 1) / 2.0

    ray_idx, pix_idx, lengths = [], [], []
    for v, theta in enumerate(geom.angles):
        ct, st = np.cos(theta), np.sin(theta)
        proj = cx * ct + cy * st
        u = t[:, None] - proj[None, :]
        ch = _chords(u, ct, st)
        det, pix = np.nonzero(ch)
        ray_idx.append(det + v * geom.n_detectors)
        pix_idx.append(pix)
        lengths.append(ch[det, pix])
    ray_idx = np.concatenate(ray_idx)
    pix_idx = np.concatenate(pix_idx)
    lengths = np.concatenate(lengths)
    n_rays = geom.n_views * geom.n_detectors
    n_pix = rows * cols

    def apply(x):
        x = np.asarray(x).ravel()
        if x.size != n_pix:
            raise ShapeError(f"expected {n_pix} pixels, got {x.size}")
        return np.bincount(ray_idx, weights=lengths * x[pix_idx],
                           minlength=n_rays)

    def adjoint(y):
        y = np.asarray(y).ravel()
        if y.size != n_rays:
            raise ShapeError(f"expected {n_rays} ray values, got {y.size}")
        return np.bincount(pix_idx, weights=lengths * y[ray_idx],
                           minlength=n_pix)

    return LinearOperator(n_pix, n_rays, apply, adjoint)


def ramp_filter_sinogram(sino, n_pad=None):
    """Frequency-domain |w| filtering of each view, zero DC."""
    n_views, n_det = sino.shape
    if n_pad is None:
        n_pad = 1
        while n_pad < 2 * n_det:
            n_pad *= 2
    freqs = np.abs(np.fft.fftfreq(n_pad))
    spec = np.fft.fft(sino, n=n_pad, axis=1) * freqs[None, :]
    return np.real(np.fft.ifft(spec, axis=1))[:, :n_det]


def fbp(meas: Measurements, geom: CtGeometry, radon=None) -> Image:
    """Filtered backprojection: ramp filter per view, adjoint, pi/n_views."""
    n_rays = geom.n_views * geom.n_detectors
    if meas.y.size != n_rays:
        raise ShapeError(f"measurements ({meas.y.size}) do not match "
                         f"geometry ({n_rays} rays)")
    sino = np.real(meas.y).reshape(geom.n_views, geom.n_detectors)
    filtered = ramp_filter_sinogram(sino)
    if radon is None:
        radon = build_radon(geom)
    back = radon.adjoint(filtered.ravel())
    return Image(geom.rows, geom.cols, 1, back * (np.pi / geom.n_views))


@dataclass
class FourierMask:
    """Boolean 2-D sampling pattern in fft2 index convention; DC on."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ShapeError("mask must be 2-D")
        if not self.mask.any():
            raise ConfigError("mask selects no samples")
        if not self.mask[0, 0]:
            raise ConfigError("mask must sample DC (index [0, 0])")

    @property
    def fraction(self):
        return float(self.mask.sum()) / self.mask.size


def random_mask(rows, cols, fraction, seed=0) -> FourierMask:
    """Uniform random mask at the given fraction, DC always included."""
    n_keep = max(1, int(round(fraction * rows * cols)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(rows * cols, size=n_keep, replace=False)
    mask = np.zeros(rows * cols, dtype=bool)
    mask[chosen] = True
    mask[0] = True
    return FourierMask(mask.reshape(rows, cols))


def build_masked_dft(fmask: FourierMask) -> LinearOperator:
    """Rows of the unitary 2-D DFT selected by the mask."""
    rows, cols = fmask.mask.shape
    sel = np.flatnonzero(fmask.mask.ravel())
    n = rows * cols
    root = np.sqrt(n)

    def apply(x):
        x = np.asarray(x).reshape(rows, cols)
        return (np.fft.fft2(x) / root).ravel()[sel]

    def adjoint(y):
        z = np.zeros(n, dtype=complex)
        z[sel] = y
        return (np.fft.ifft2(z.reshape(rows, cols)) * root).ravel()

    return LinearOperator(n, sel.size, apply, adjoint, field="complex")


def build_blur(rows, cols, kernel) -> LinearOperator:
    """Circular 2-D correlation with a centered odd-sized kernel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ShapeError("kernel must be 2-D with odd dims")
    kr, kc = kernel.shape[0] // 2, kernel.shape[1] // 2

    def correlate(x, k):
        a = np.asarray(x).reshape(rows, cols)
        out = np.zeros_like(a)
        for dy in range(-kr, kr + 1):
            for dx in range(-kc, kc + 1):
                w = k[dy + kr, dx + kc]
                if w != 0.0:
                    out += w * np.roll(np.roll(a, -dy, axis=0), -dx, axis=1)
        return out.ravel()

    flipped = kernel[::-1, ::-1]
    return LinearOperator(rows * cols, rows * cols,
                          lambda x: correlate(x, kernel),
                          lambda y: correlate(y, flipped))


def simulate_ct(x_true: Image, geom: CtGeometry, i0, seed=0,
                noiseless=False, radon=None) -> Measurements:
    """Poisson transmission measurements with count clamping.

    Line integrals l = A x; counts ~ Poisson(i0 exp(-l)); the log
    sinogram is -log(max(counts, 1) / i0) with statistical weights
    max(counts, 1).  With noiseless=True returns y = l and the ideal
    weights i0 exp(-l).
    """
    if i0 <= 0:
        raise ConfigError("i0 must be positive")
    if x_true.frames != 1:
        raise ShapeError("ct simulation expects a single frame")
    if radon is None:
        radon = build_radon(geom)
    line = radon.apply(x_true.data)
    if noiseless:
        return Measurements(line, i0 * np.exp(-line), "radon")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(i0 * np.exp(-line)).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    return Measurements(-np.log(counts / i0), counts, "radon")


def simulate_gaussian(x_true: Image, op: LinearOperator, sigma,
                      seed=0) -> Measurements:
    """y = A x + noise at standard deviation sigma; weights 1/sigma^2.

    Complex operators get circular complex noise (E|eps|^2 = sigma^2).
    sigma = 0 gives exact data and no weights.
    """
    if sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    clean = op.apply(x_true.data)
    if sigma == 0:
        return Measurements(clean, None, "gaussian")
    rng = np.random.default_rng(seed)
    if op.field == "complex":
        noise = (rng.standard_normal(clean.size)
                 + 1j * rng.standard_normal(clean.size)) * (sigma / np.sqrt(2))
    else:
        noise = rng.standard_normal(clean.size) * sigma
    return Measurements(clean + noise, np.full(clean.size, sigma ** -2.0),
                        "gaussian")
