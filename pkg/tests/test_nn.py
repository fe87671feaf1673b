import numpy as np
import pytest

from oracles import central_difference_gradient
from sdsar.nn import (
    avgpool2_backward,
    avgpool2_forward,
    conv2d_backward,
    conv2d_forward,
    he_init,
    reflect_pad,
    reflect_pad_adjoint,
    relu_backward,
    relu_forward,
)


def test_reflect_pad_matches_numpy():
    x = np.arange(24, dtype=float).reshape(1, 1, 4, 6)
    np.testing.assert_array_equal(reflect_pad(x, 2), np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), "reflect"))


def test_reflect_pad_adjoint_is_exact():
    # <pad(x), g> == <x, adjoint(g)> for random x, g
    rng = np.random.default_rng(0)
    for pad in (1, 2, 3):
        x = rng.normal(size=(2, 3, 5, 7))
        g = rng.normal(size=(2, 3, 5 + 2 * pad, 7 + 2 * pad))
        lhs = float((reflect_pad(x, pad) * g).sum())
        rhs = float((x * reflect_pad_adjoint(g, pad)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_reflect_pad_rejects_too_small_inputs():
    with pytest.raises(ValueError):
        reflect_pad(np.ones((1, 1, 3, 3)), 3)


@pytest.mark.parametrize("dilation", [1, 2])
def test_conv2d_gradients_match_finite_differences(dilation):
    rng = np.random.default_rng(1 + dilation)
    x = rng.normal(size=(2, 3, 6, 5))
    w = he_init(rng, 4, 3, 3)
    b = rng.normal(size=4)
    gy = rng.normal(size=(2, 4, 6, 5))

    y, cache = conv2d_forward(x, w, b, dilation)
    gx, gw, gb = conv2d_backward(gy, cache)

    def loss_wrt(theta, ref, which):
        parts = {"x": x, "w": w, "b": b}
        parts[which] = theta.reshape(ref.shape)
        out, _ = conv2d_forward(parts["x"], parts["w"], parts["b"], dilation)
        return float((out * gy).sum())

    for which, ref, analytic in (("x", x, gx), ("w", w, gw), ("b", b, gb)):
        fd = central_difference_gradient(
            lambda t, ref=ref, which=which: loss_wrt(t, ref, which), ref.ravel(), h=1e-6
        )
        np.testing.assert_allclose(analytic.ravel(), fd, rtol=1e-6, atol=1e-8)


def test_conv2d_shape_and_validation():
    x = np.ones((1, 2, 8, 8))
    w = np.ones((3, 2, 3, 3))
    y, _ = conv2d_forward(x, w, np.zeros(3), dilation=1)
    assert y.shape == (1, 3, 8, 8)
    with pytest.raises(ValueError):
        conv2d_forward(x, np.ones((3, 5, 3, 3)), np.zeros(3), 1)
    with pytest.raises(ValueError):
        conv2d_forward(x, np.ones((3, 2, 4, 4)), np.zeros(3), 1)


def test_relu_roundtrip():
    x = np.array([[-1.0, 2.0], [0.0, -3.0]])
    y, mask = relu_forward(x)
    np.testing.assert_array_equal(y, [[0.0, 2.0], [0.0, 0.0]])
    g = relu_backward(np.ones_like(x), mask)
    np.testing.assert_array_equal(g, [[0.0, 1.0], [0.0, 0.0]])


def test_avgpool_forward_and_adjoint():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 6, 7))  # odd width drops the last column
    y, cache = avgpool2_forward(x)
    assert y.shape == (1, 2, 3, 3)
    gy = rng.normal(size=y.shape)
    gx = avgpool2_backward(gy, cache)
    lhs = float((y * gy).sum())
    rhs = float((x * gx).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_avgpool_passes_through_unit_axes():
    x = np.random.default_rng(3).normal(size=(1, 1, 1, 6))
    y, cache = avgpool2_forward(x)
    assert y.shape == (1, 1, 1, 3)
    gx = avgpool2_backward(np.ones_like(y), cache)
    assert gx.shape == x.shape
