import math

import numpy as np

from mbirlab.core import Image
from mbirlab.errors import ShapeError
from mbirlab.metrics import (CSV_HEADER, MetricsRow, psnr, read_metrics_csv,
                             rmse, write_metrics_csv)
from mbirlab.phantom import (_rasterize, _ELLIPSES, phantom_value_at,
                             shepp_logan, shepp_logan_variant)


def test_phantom_corners_and_range():
    img = shepp_logan(64, 64).frame(0)
    assert img[0, 0] == 0.0
    assert img[0, -1] == 0.0
    assert img[-1, 0] == 0.0
    assert img[-1, -1] == 0.0
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_phantom_center_value_is_hand_sum():
    # at (0, 0) only the skull and brain ellipses apply: 1.0 - 0.8
    assert phantom_value_at(0.0, 0.0) == 1.0 - 0.8
    img = shepp_logan(64, 64).frame(0)
    # the four pixels nearest the center sit well inside both ellipses
    assert np.allclose(img[31:33, 31:33], 0.2)


def test_phantom_downsample_consistency():
    hi = _rasterize(_ELLIPSES, 128, 128)
    lo = hi.reshape(64, 2, 64, 2).mean(axis=(1, 3))
    direct = shepp_logan(64, 64).frame(0)
    assert np.mean(np.abs(lo - direct)) <= 0.1


def test_phantom_rejects_tiny_dims():
    try:
        shepp_logan(8, 64)
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")


def test_variant_deterministic_and_distinct():
    a = shepp_logan_variant(48, 48, seed=3).data
    b = shepp_logan_variant(48, 48, seed=3).data
    c = shepp_logan_variant(48, 48, seed=4).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_variant_keeps_outer_support():
    # the skull ellipse is never perturbed; pixels whose centers fall
    # outside it must stay zero in every variant
    x = (np.arange(48) + 0.5 - 24.0) / 24.0
    y = (24.0 - np.arange(48) - 0.5) / 24.0
    X, Y = np.meshgrid(x, y)
    outside = (X / 0.69) ** 2 + (Y / 0.92) ** 2 > 1.0
    for seed in range(4):
        v = shepp_logan_variant(48, 48, seed=seed).frame(0)
        assert np.all(v[outside] == 0.0)


def test_psnr_exact_match_is_inf():
    x = Image.from_array(np.full((5, 5), 0.3))
    assert psnr(x, x) == float("inf")


def test_psnr_constant_offset():
    ref = Image.from_array(np.zeros((6, 6)))
    x = Image.from_array(np.full((6, 6), 0.1))
    assert abs(rmse(x, ref) - 0.1) < 1e-15
    assert abs(psnr(x, ref, peak=1.0) - 20.0) < 1e-12


def test_psnr_matches_two_pass_recomputation():
    rng = np.random.default_rng(7)
    a = rng.random((9, 11))
    b = rng.random((9, 11))
    x, ref = Image.from_array(a), Image.from_array(b)
    # accumulate squared errors one at a time with fsum, no vectorization
    sq = math.fsum((float(u) - float(v)) ** 2
                   for u, v in zip(a.ravel(), b.ravel()))
    want = 20.0 * math.log10(2.5 / math.sqrt(sq / a.size))
    assert abs(psnr(x, ref, peak=2.5) - want) < 1e-10


def test_psnr_shape_and_peak_validation():
    x = Image.from_array(np.zeros((4, 4)))
    y = Image.from_array(np.zeros((4, 5)))
    try:
        psnr(x, y)
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")
    try:
        psnr(x, x, peak=0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")


def test_metrics_csv_round_trip(tmp_path):
    rows = [
        MetricsRow("fbp", 18.25, 0.1223, 0.0, 1),
        MetricsRow("exact", float("inf"), 0.0, 0.0, 30),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "inf" in text.splitlines()[2]
    back = read_metrics_csv(path)
    assert back[0].name == "fbp"
    assert back[0].psnr_db == 18.25
    assert back[1].psnr_db == float("inf")
    assert back[1].rmse == 0.0
    assert back[1].iterations == 30
