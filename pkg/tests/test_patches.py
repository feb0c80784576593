"""Patch extraction: adjointness, coverage accounting, exact round trips."""

import numpy as np
import pytest

from mbirlab.core import Image
from mbirlab.errors import ConfigError
from mbirlab.patches import (PatchConfig, assemble_patches, coverage_counts,
                             extract_patches, patch_count, scatter_patches)


def test_patch_count_and_shapes():
    cfg = PatchConfig(3, 3, stride=1, boundary="wrap")
    assert patch_count(8, 8, cfg) == 64
    cfg_t = PatchConfig(3, 3, stride=2, boundary="truncate")
    # origins 0, 2, 4 fit a 3-wide patch in 7 pixels; 5 would overhang
    assert patch_count(7, 7, cfg_t) == 9

    img = Image.from_array(np.arange(64, dtype=float).reshape(8, 8))
    P = extract_patches(img, cfg)
    assert P.shape == (9, 64)


def test_extract_scatter_adjoint():
    # <extract(x), Z> == <x, scatter(Z)> makes scatter the exact transpose
    rng = np.random.default_rng(0)
    for boundary, stride in (("wrap", 1), ("wrap", 2), ("truncate", 1),
                             ("truncate", 3)):
        cfg = PatchConfig(3, 4, stride=stride, boundary=boundary)
        img = Image.from_array(rng.standard_normal((9, 11)))
        P = extract_patches(img, cfg)
        Z = rng.standard_normal(P.shape)
        lhs = float(np.sum(P * Z))
        back = scatter_patches(Z, (9, 11, 1), cfg)
        rhs = float(np.dot(img.data, back))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


def test_coverage_wrap_uniform():
    cfg = PatchConfig(4, 4, stride=1, boundary="wrap")
    counts = coverage_counts((10, 10, 1), cfg)
    assert np.all(counts == 16)


def test_coverage_truncate_edges():
    cfg = PatchConfig(3, 3, stride=1, boundary="truncate")
    counts = coverage_counts((7, 7, 1), cfg).reshape(7, 7)
    assert counts[3, 3] == 9
    assert counts[0, 0] == 1
    assert counts[0, 3] == 3


def test_assemble_is_inverse_of_extract():
    rng = np.random.default_rng(1)
    img = Image.from_array(rng.standard_normal((8, 8)))
    for cfg in (PatchConfig(3, 3, stride=1, boundary="wrap"),
                PatchConfig(2, 4, stride=1, boundary="truncate"),
                PatchConfig(3, 3, stride=2, boundary="wrap")):
        P = extract_patches(img, cfg)
        out = assemble_patches(P, (8, 8, 1), cfg)
        covered = coverage_counts((8, 8, 1), cfg) > 0
        assert np.allclose(out.data[covered], img.data[covered], atol=1e-12)
        assert np.all(out.data[~covered] == 0.0)


def test_frames_concatenate_columns():
    rng = np.random.default_rng(2)
    arr = rng.standard_normal((3, 6, 6))
    img = Image.from_array(arr)
    cfg = PatchConfig(2, 2, stride=2, boundary="wrap")
    P = extract_patches(img, cfg)
    per = patch_count(6, 6, cfg)
    assert P.shape[1] == 3 * per
    P0 = extract_patches(Image.from_array(arr[0]), cfg)
    assert np.array_equal(P[:, :per], P0)


def test_patch_config_validation():
    with pytest.raises(ConfigError):
        PatchConfig(0, 3)
    with pytest.raises(ConfigError):
        PatchConfig(3, 3, stride=0)
    with pytest.raises(ConfigError):
        PatchConfig(3, 3, boundary="mirror")


def test_wrap_patches_use_modular_pixels():
    img = Image.from_array(np.arange(9, dtype=float).reshape(3, 3))
    cfg = PatchConfig(2, 2, stride=1, boundary="wrap")
    P = extract_patches(img, cfg)
    # origin (2, 2) wraps to rows (2, 0), cols (2, 0)
    last = P[:, -1]
    assert np.array_equal(last, np.array([8.0, 6.0, 2.0, 0.0]))
