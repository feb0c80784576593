"""Patch extraction and assembly.

Patches are vectorized row-major into columns of a (patch_rows *
patch_cols) x N matrix.  Origins advance row-major with the configured
stride; "wrap" indexes periodically so every origin is valid, "truncate"
keeps only fully interior patches.  Multi-frame images are processed one
frame at a time and the columns concatenated frame-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    patch_rows: int
    patch_cols: int
    stride: int = 1
    boundary: str = "wrap"

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise ConfigError("patch dims must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.boundary not in ("wrap", "truncate"):
            raise ConfigError(f"unknown boundary mode {self.boundary!r}")


def _origins(dim, patch, stride, boundary):
    if boundary == "wrap":
        return np.arange(0, dim, stride)
    if dim < patch:
        raise ShapeError(f"patch {patch} exceeds image dim {dim}")
    return np.arange(0, dim - patch + 1, stride)


def _index_grids(rows, cols, cfg):
    orr = _origins(rows, cfg.patch_rows, cfg.stride, cfg.boundary)
    orc = _origins(cols, cfg.patch_cols, cfg.stride, cfg.boundary)
    idx_r = orr[:, None] + np.arange(cfg.patch_rows)[None, :]
    idx_c = orc[:, None] + np.arange(cfg.patch_cols)[None, :]
    if cfg.boundary == "wrap":
        idx_r %= rows
        idx_c %= cols
    return idx_r, idx_c


def patch_count(rows, cols, cfg):
    idx_r, idx_c = _index_grids(rows, cols, cfg)
    return idx_r.shape[0] * idx_c.shape[0]


def extract_patches(img: Image, cfg: PatchConfig):
    """All patches of every frame as columns, origin order row-major."""
    idx_r, idx_c = _index_grids(img.rows, img.cols, cfg)
    n_r, p_r = idx_r.shape
    n_c, p_c = idx_c.shape
    cols = []
    for f in range(img.frames):
        frame = img.frame(f)
        # gather -> (n_r, n_c, p_r, p_c), then one column per origin
        block = frame[idx_r[:, None, :, None], idx_c[None, :, None, :]]
        cols.append(block.reshape(n_r * n_c, p_r * p_c).T)
    return np.concatenate(cols, axis=1) if img.frames > 1 else cols[0]


def scatter_patches(P, dims, cfg: PatchConfig):
    """Sum of P_j^T applied to column j (transpose scatter, no averaging)."""
    rows, cols = dims[0], dims[1]
    frames = dims[2] if len(dims) > 2 else 1
    idx_r, idx_c = _index_grids(rows, cols, cfg)
    n_r, p_r = idx_r.shape
    n_c, p_c = idx_c.shape
    per_frame = n_r * n_c
    if P.shape != (p_r * p_c, per_frame * frames):
        raise ShapeError(f"patch matrix shape {P.shape} does not match "
                         f"{(p_r * p_c, per_frame * frames)}")
    flat_idx = (idx_r[:, None, :, None] * cols
                + idx_c[None, :, None, :]).reshape(per_frame, p_r * p_c)
    out = np.zeros(rows * cols * frames)
    for f in range(frames):
        acc = np.zeros(rows * cols)
        block = P[:, f * per_frame:(f + 1) * per_frame].T
        np.add.at(acc, flat_idx.ravel(), block.ravel())
        out[f * rows * cols:(f + 1) * rows * cols] = acc
    return out


def coverage_counts(dims, cfg: PatchConfig):
    """How many extracted patches cover each pixel of one frame."""
    rows, cols = dims[0], dims[1]
    idx_r, idx_c = _index_grids(rows, cols, cfg)
    acc = np.zeros(rows * cols)
    flat_idx = (idx_r[:, None, :, None] * cols + idx_c[None, :, None, :])
    np.add.at(acc, flat_idx.ravel(), 1.0)
    return acc


def assemble_patches(P, dims, cfg: PatchConfig) -> Image:
    """Average overlapping patches back into an image.

    Pixels never covered (possible under truncate with gappy strides)
    come back as zero.
    """
    rows, cols = dims[0], dims[1]
    frames = dims[2] if len(dims) > 2 else 1
    acc = scatter_patches(P, dims, cfg)
    counts = coverage_counts(dims, cfg)
    counts_all = np.tile(counts, frames)
    data = np.where(counts_all > 0, acc / np.maximum(counts_all, 1.0), 0.0)
    return Image(rows, cols, frames, data)
