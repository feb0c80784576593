"""Analytic head phantom and seeded variants of it.

The standard ten-ellipse head phantom with the low-contrast intensity
table (values stay inside [0, 1]).  Rasterization is by center-point
inclusion: a pixel takes the sum of intensities of every ellipse whose
interior (boundary included) contains the pixel's center, with the image
square mapped to [-1, 1]^2.
"""

from __future__ import annotations

import numpy as np

from .core import Image
from .errors import ShapeError

# (intensity, half-axis a, half-axis b, center x, center y, angle degrees)
_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _rasterize(ellipses, rows, cols):
    x = (np.arange(cols) + 0.5 - cols / 2.0) / (cols / 2.0)
    y = (rows / 2.0 - np.arange(rows) - 0.5) / (rows / 2.0)
    X, Y = np.meshgrid(x, y)
    img = np.zeros((rows, cols))
    for inten, a, b, x0, y0, ang in ellipses:
        phi = np.deg2rad(ang)
        xr = (X - x0) * np.cos(phi) + (Y - y0) * np.sin(phi)
        yr = -(X - x0) * np.sin(phi) + (Y - y0) * np.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += inten
    # intensity sums cancel to float dust in nested regions; snap into range
    return np.clip(img, 0.0, 1.0)


def shepp_logan(rows, cols) -> Image:
    """Rasterized head phantom; dims must be at least 16."""
    if rows < 16 or cols < 16:
        raise ShapeError("phantom dims must be >= 16")
    return Image.from_array(_rasterize(_ELLIPSES, rows, cols))


def phantom_value_at(x, y, ellipses=_ELLIPSES):
    """Analytic phantom value at a point of [-1, 1]^2 (test hook)."""
    total = 0.0
    for inten, a, b, x0, y0, ang in ellipses:
        phi = np.deg2rad(ang)
        xr = (x - x0) * np.cos(phi) + (y - y0) * np.sin(phi)
        yr = -(x - x0) * np.sin(phi) + (y - y0) * np.cos(phi)
        if (xr / a) ** 2 + (yr / b) ** 2 <= 1.0:
            total += inten
    return total


def shepp_logan_variant(rows, cols, seed, jitter=0.06) -> Image:
    """Seeded perturbation of the phantom's interior structures.

    Centers shift, axes and intensities scale, and angles tilt by a few
    percent; the outer skull ellipse stays put so the support is stable.
    Values are clipped to [0, 1].
    """
    if rows < 16 or cols < 16:
        raise ShapeError("phantom dims must be >= 16")
    rng = np.random.default_rng(seed)
    out = [_ELLIPSES[0]]
    for inten, a, b, x0, y0, ang in _ELLIPSES[1:]:
        scale = 1.0 + jitter * rng.uniform(-1, 1, size=3)
        shift = jitter * 0.5 * rng.uniform(-1, 1, size=2)
        tilt = 10.0 * jitter * rng.uniform(-1, 1)
        out.append((inten * scale[0], a * scale[1], b * scale[2],
                    x0 + shift[0], y0 + shift[1], ang + tilt))
    img = np.clip(_rasterize(tuple(out), rows, cols), 0.0, 1.0)
    return Image.from_array(img)
