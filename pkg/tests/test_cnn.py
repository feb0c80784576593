import numpy as np

from mbirlab.cnn import (ConvNetParams, cnn_backward, cnn_forward,
                         train_denoiser, _forward_frame)
from mbirlab.core import Image
from mbirlab.errors import ConfigError, ShapeError


def test_zero_weights_is_identity():
    rng = np.random.default_rng(0)
    x = Image.from_array(rng.standard_normal((6, 7)))
    out = cnn_forward(ConvNetParams.zeros(3), x)
    assert np.array_equal(out.data, x.data)


def test_param_count():
    th = ConvNetParams.zeros(16)
    # 9c + c + 9c^2 + c + 9c + 1
    assert th.n_params == 9 * 16 + 16 + 9 * 256 + 16 + 9 * 16 + 1
    assert th.as_vector().size == th.n_params
    back = ConvNetParams.from_vector(16, th.as_vector())
    assert back.channels == 16


def test_planted_identity_path_doubles_constant_input():
    # center taps on channel 0 all the way through: each conv is then
    # the identity on a nonnegative constant, and the skip doubles it
    th = ConvNetParams.zeros(2)
    th.w1[0, 0, 1, 1] = 1.0
    th.w2[0, 0, 1, 1] = 1.0
    th.w3[0, 0, 1, 1] = 1.0
    c = 0.7
    x = Image.from_array(np.full((4, 4), c))
    out = cnn_forward(th, x)
    assert np.allclose(out.data, 2.0 * c, atol=1e-15)


def test_positive_homogeneity_with_zero_biases():
    rng = np.random.default_rng(1)
    th = ConvNetParams.random(3, seed=5)
    x = Image.from_array(rng.standard_normal((8, 8)))
    x2 = Image.from_array(2.0 * x.frame(0))
    a = cnn_forward(th, x2).data
    b = 2.0 * cnn_forward(th, x).data
    assert np.allclose(a, b, atol=1e-12)


def test_biases_break_scaling():
    rng = np.random.default_rng(2)
    th = ConvNetParams.random(3, seed=6)
    th.b1 = th.b1 + 0.3
    x = Image.from_array(rng.standard_normal((8, 8)))
    x2 = Image.from_array(2.0 * x.frame(0))
    a = cnn_forward(th, x2).data
    b = 2.0 * cnn_forward(th, x).data
    assert not np.allclose(a, b, atol=1e-6)


def test_backward_zero_grad_out():
    rng = np.random.default_rng(3)
    th = ConvNetParams.random(2, seed=7)
    x = Image.from_array(rng.standard_normal((6, 6)))
    gth, gx = cnn_backward(th, x, Image.from_array(np.zeros((6, 6))))
    assert np.all(gth.as_vector() == 0.0)
    assert np.all(gx.data == 0.0)


def test_backward_skip_path_through_zero_net():
    g = np.zeros((5, 5))
    g[2, 3] = 1.0
    x = Image.from_array(np.random.default_rng(4).standard_normal((5, 5)))
    gth, gx = cnn_backward(ConvNetParams.zeros(2), x, Image.from_array(g))
    assert np.array_equal(gx.data, g.ravel())
    # the only nonzero parameter gradient is the output bias
    assert gth.b3[0] == 1.0
    assert np.all(gth.w1 == 0.0) and np.all(gth.w2 == 0.0)
    assert np.all(gth.w3 == 0.0)


def _fd_fixture(seed):
    r = np.random.default_rng(100 + seed)
    img = Image.from_array(r.standard_normal((8, 8)))
    th = ConvNetParams.random(2, seed=200 + seed)
    th.b1 = 0.05 * r.standard_normal(2)
    th.b2 = 0.05 * r.standard_normal(2)
    th.b3 = 0.05 * r.standard_normal(1)
    g = Image.from_array(r.standard_normal((8, 8)))
    return img, th, g


def test_all_parameter_gradients_match_finite_differences():
    h = 1e-5
    for seed in (7, 19, 37, 55, 56):
        img, th, g = _fd_fixture(seed)
        # the seeds are chosen so no ReLU unit sits near its kink; a
        # margin below 200 h would silently corrupt the comparison
        _, (x, a1, r1, a2, r2) = _forward_frame(th, img.frame(0))
        assert min(np.abs(a1).min(), np.abs(a2).min()) > 200 * h
        gth, _ = cnn_backward(th, img, g)
        vec, gvec = th.as_vector(), gth.as_vector()
        fd = np.zeros(vec.size)
        for i in range(vec.size):
            vp = vec.copy()
            vp[i] += h
            vm = vec.copy()
            vm[i] -= h
            fp = float(cnn_forward(ConvNetParams.from_vector(2, vp),
                                   img).data @ g.data)
            fm = float(cnn_forward(ConvNetParams.from_vector(2, vm),
                                   img).data @ g.data)
            fd[i] = (fp - fm) / (2 * h)
        rel = np.abs(fd - gvec) / np.maximum(np.abs(gvec), 1e-8)
        assert rel.max() <= 1e-4


def test_input_gradient_matches_finite_differences():
    img, th, g = _fd_fixture(7)
    _, gx = cnn_backward(th, img, g)
    h = 1e-5
    rng = np.random.default_rng(0)
    for _ in range(10):
        i = rng.integers(0, img.data.size)
        dp = img.data.copy()
        dp[i] += h
        dm = img.data.copy()
        dm[i] -= h
        fp = float(cnn_forward(th, img.copy_with(dp)).data @ g.data)
        fm = float(cnn_forward(th, img.copy_with(dm)).data @ g.data)
        fd = (fp - fm) / (2 * h)
        assert abs(fd - gx.data[i]) <= 1e-4 * max(abs(gx.data[i]), 1e-8)


def test_backward_shape_validation():
    th = ConvNetParams.zeros(2)
    x = Image.from_array(np.zeros((6, 6)))
    bad = Image.from_array(np.zeros((5, 6)))
    try:
        cnn_backward(th, x, bad)
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")


def test_train_identity_task_stays_at_zero():
    rng = np.random.default_rng(5)
    imgs = [Image.from_array(rng.standard_normal((6, 6))) for _ in range(3)]
    pairs = [(im, im) for im in imgs]
    th = train_denoiser(pairs, 10, 0.1, 2, seed=0, channels=2,
                        init=ConvNetParams.zeros(2))
    assert np.all(th.as_vector() == 0.0)


def test_train_learns_constant_shift():
    rng = np.random.default_rng(0)
    xin = Image.from_array(rng.random((8, 8)))
    tgt = Image.from_array(xin.frame(0) + 0.5)
    th = train_denoiser([(xin, tgt)], 500, 0.05, 1, seed=0, channels=4)
    out = cnn_forward(th, xin)
    assert float(np.mean((out.data - tgt.data) ** 2)) <= 1e-3


def test_train_is_deterministic():
    rng = np.random.default_rng(6)
    pairs = [(Image.from_array(rng.standard_normal((6, 6))),
              Image.from_array(rng.standard_normal((6, 6))))
             for _ in range(4)]
    a = train_denoiser(pairs, 5, 0.05, 2, seed=3, channels=2)
    b = train_denoiser(pairs, 5, 0.05, 2, seed=3, channels=2)
    assert np.array_equal(a.as_vector(), b.as_vector())


def test_train_validation():
    x = Image.from_array(np.zeros((4, 4)))
    try:
        train_denoiser([(x, x)], 5, 0.0, 1)
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")
    try:
        train_denoiser([], 5, 0.1, 1)
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")
    y = Image.from_array(np.zeros((5, 4)))
    try:
        train_denoiser([(x, x), (y, y)], 5, 0.1, 1)
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")


def test_params_validation():
    try:
        ConvNetParams(np.zeros((2, 1, 3, 3)), np.zeros(3),
                      np.zeros((2, 2, 3, 3)), np.zeros(2),
                      np.zeros((1, 2, 3, 3)), np.zeros(1))
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")
    try:
        ConvNetParams.from_vector(2, np.zeros(10))
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")
