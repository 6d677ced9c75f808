"""Kernel-level checks: shapes, known values, and gradients vs finite differences."""

import numpy as np
import pytest

from graphcd import ops
from graphcd.gradcheck import finite_diff_grad


@pytest.mark.parametrize("cin,cout,k,stride,pad,h", [
    (3, 4, 3, 2, 1, 8),
    (3, 4, 7, 2, 3, 16),
    (4, 6, 1, 2, 0, 8),
    (4, 6, 1, 1, 0, 8),
    (2, 3, 3, 1, 1, 6),
])
def test_conv2d_gradients(cin, cout, k, stride, pad, h):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, cin, h, h))
    w = rng.normal(size=(cout, cin, k, k)) * 0.5
    b = rng.normal(size=cout)
    y, cache = ops.conv2d_forward(x, w, b, stride=stride, pad=pad)
    g = rng.normal(size=y.shape)
    dx, dw, db = ops.conv2d_backward(g, cache)

    def loss(p):
        yy, _ = ops.conv2d_forward(p["x"], p["w"], p["b"], stride=stride, pad=pad)
        return float((yy * g).sum())

    rep = finite_diff_grad(loss, {"x": x, "w": w, "b": b},
                           {"x": dx, "w": dw, "b": db},
                           step=1e-5, tolerance=1e-6)
    assert rep.passed, rep.lines()


def test_conv2d_output_size_and_channel_mismatch():
    x = np.zeros((1, 3, 16, 16))
    w = np.zeros((8, 3, 7, 7))
    y, _ = ops.conv2d_forward(x, w, stride=2, pad=3)
    assert y.shape == (1, 8, 8, 8)
    with pytest.raises(ValueError, match="channels"):
        ops.conv2d_forward(np.zeros((1, 4, 8, 8)), w)


def test_conv2d_matches_direct_computation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    y, _ = ops.conv2d_forward(x, w, stride=1, pad=0)
    # direct sliding-window evaluation
    for i in range(3):
        for j in range(3):
            want = (x[0, :, i:i + 3, j:j + 3] * w).sum(axis=(1, 2, 3))
            np.testing.assert_allclose(y[0, :, i, j], want, atol=1e-12)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(train):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5, 4, 4))
    gamma = 1.0 + 0.3 * rng.normal(size=5)
    beta = 0.2 * rng.normal(size=5)
    rm = 0.1 * rng.normal(size=5)
    rv = rng.uniform(0.5, 1.5, size=5)
    g = rng.normal(size=x.shape)

    def loss(p):
        y, _ = ops.batchnorm_forward(p["x"], p["gamma"], p["beta"],
                                     rm.copy(), rv.copy(), train=train)
        return float((y * g).sum())

    _, cache = ops.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train=train)
    dx, dg, db = ops.batchnorm_backward(g, cache)
    rep = finite_diff_grad(loss, {"x": x, "gamma": gamma, "beta": beta},
                           {"x": dx, "gamma": dg, "beta": db},
                           step=1e-5, tolerance=1e-6)
    assert rep.passed, rep.lines()


def test_batchnorm_updates_running_stats():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=2.0, scale=3.0, size=(4, 2, 8, 8))
    rm = np.zeros(2)
    rv = np.ones(2)
    ops.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)
    # evaluation mode must leave them untouched
    rm2, rv2 = rm.copy(), rv.copy()
    ops.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=False)
    np.testing.assert_array_equal(rm, rm2)
    np.testing.assert_array_equal(rv, rv2)


def test_maxpool_known_values_and_gradient():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    y, cache = ops.maxpool2d_forward(x, kernel=3, stride=2, pad=1)
    np.testing.assert_array_equal(y[0, 0], [[5, 7], [13, 15]])

    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 8, 8))
    y, cache = ops.maxpool2d_forward(x)
    g = rng.normal(size=y.shape)
    dx = ops.maxpool2d_backward(g, cache)

    def loss(p):
        yy, _ = ops.maxpool2d_forward(p["x"])
        return float((yy * g).sum())

    rep = finite_diff_grad(loss, {"x": x}, {"x": dx}, step=1e-6, tolerance=1e-6)
    assert rep.passed, rep.lines()


def test_bilinear_upsample_values_and_gradient():
    x = np.arange(4.0).reshape(1, 1, 1, 4)
    y, _ = ops.bilinear_upsample_forward(x, 2)
    np.testing.assert_allclose(
        y[0, 0, 0], [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0])

    const, _ = ops.bilinear_upsample_forward(np.full((1, 1, 3, 3), 2.5), 4)
    np.testing.assert_allclose(const, 2.5)

    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 1, 3, 4))
    y, cache = ops.bilinear_upsample_forward(x, 4)
    assert y.shape == (2, 1, 12, 16)
    g = rng.normal(size=y.shape)
    dx = ops.bilinear_upsample_backward(g, cache)

    def loss(p):
        yy, _ = ops.bilinear_upsample_forward(p["x"], 4)
        return float((yy * g).sum())

    rep = finite_diff_grad(loss, {"x": x}, {"x": dx}, step=1e-5, tolerance=1e-7)
    assert rep.passed, rep.lines()


def test_upsample_matrix_rows_are_convex_weights():
    m = ops.upsample_matrix(5, 3)
    assert m.shape == (15, 5)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
    assert (m >= 0).all()


def test_softmax_and_sigmoid_basics():
    rng = np.random.default_rng(6)
    s = rng.normal(size=(4, 7)) * 5
    q = ops.softmax_last(s)
    np.testing.assert_allclose(q.sum(axis=-1), 1.0, atol=1e-12)
    assert ops.sigmoid(np.array([0.0]))[0] == 0.5
    big = ops.sigmoid(np.array([800.0, -800.0]))
    assert np.isfinite(big).all()
