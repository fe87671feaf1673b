"""Dense numpy building blocks for the despeckling network.

Everything operates on float64 (N, C, H, W) batches. Convolutions keep the
spatial shape using reflective padding; each forward returns the cache its
backward needs, and every backward is the exact adjoint of its forward so
finite-difference checks agree to machine-level precision.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericOverflowError

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "relu_forward",
    "relu_backward",
    "avgpool2_forward",
    "avgpool2_backward",
    "reflect_pad",
    "reflect_pad_adjoint",
    "he_init",
]


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflect-pad the two trailing axes (no edge repeat)."""
    if pad == 0:
        return x
    if x.shape[-1] <= pad or x.shape[-2] <= pad:
        raise ValueError(
            f"spatial size {x.shape[-2:]} too small for reflect pad {pad}; "
            "need both sides strictly greater than the pad"
        )
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width, mode="reflect")


def _fold_axis(g: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Adjoint of reflect padding along one axis: mirror pads back inside.

    Padded position j (0 <= j < pad) mirrors source index pad - j, and
    padded position pad + n + j mirrors source index n - 2 - j.
    """
    n = g.shape[axis] - 2 * pad

    def sl(a, b, step=1):
        return tuple(
            slice(a, b, step) if i == axis else slice(None) for i in range(g.ndim)
        )

    core = g[sl(pad, pad + n)].copy()
    if pad:
        core[sl(1, pad + 1)] += g[sl(pad - 1, None, -1)]
        core[sl(n - 1 - pad, n - 1)] += g[sl(pad + n + pad - 1, pad + n - 1, -1)]
    return core


def reflect_pad_adjoint(g: np.ndarray, pad: int) -> np.ndarray:
    """Exact adjoint of ``reflect_pad`` on the two trailing axes."""
    if pad == 0:
        return g
    return _fold_axis(_fold_axis(g, pad, g.ndim - 1), pad, g.ndim - 2)


def _tap_offsets(ksize: int, dilation: int) -> list[tuple[int, int]]:
    return [(dy * dilation, dx * dilation) for dy in range(ksize) for dx in range(ksize)]


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int = 1):
    """Same-shape dilated convolution with reflective padding.

    x: (N, C_in, H, W); weight: (C_out, C_in, k, k); bias: (C_out,).
    Returns (y, cache) with y: (N, C_out, H, W).
    """
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in_w != c_in:
        raise ValueError(f"weight expects {c_in_w} input channels, got {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {kh}x{kw}")
    pad = dilation * (kh - 1) // 2
    xp = reflect_pad(x, pad)
    taps = _tap_offsets(kh, dilation)
    cols = np.empty((n, c_in, len(taps), h, w), dtype=np.float64)
    for t, (dy, dx) in enumerate(taps):
        cols[:, :, t] = xp[:, :, dy : dy + h, dx : dx + w]
    cols2 = cols.reshape(n, c_in * len(taps), h * w)
    w2 = weight.reshape(c_out, c_in * kh * kw)
    y = np.matmul(w2, cols2).reshape(n, c_out, h, w) + bias[None, :, None, None]
    cache = (cols2, weight, dilation, x.shape)
    return y, cache


def conv2d_backward(grad_y: np.ndarray, cache):
    """Gradients of a conv2d: returns (grad_x, grad_weight, grad_bias)."""
    cols2, weight, dilation, x_shape = cache
    n, c_in, h, w = x_shape
    c_out, _, kh, kw = weight.shape
    pad = dilation * (kh - 1) // 2
    taps = _tap_offsets(kh, dilation)

    gy2 = grad_y.reshape(n, c_out, h * w)
    grad_bias = grad_y.sum(axis=(0, 2, 3))
    grad_w = np.einsum("nof,ncf->oc", gy2, cols2).reshape(weight.shape)

    w2 = weight.reshape(c_out, c_in * kh * kw)
    gcols = np.matmul(w2.T, gy2).reshape(n, c_in, len(taps), h, w)
    gxp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for t, (dy, dx) in enumerate(taps):
        gxp[:, :, dy : dy + h, dx : dx + w] += gcols[:, :, t]
    grad_x = reflect_pad_adjoint(gxp, pad)
    return grad_x, grad_w, grad_bias


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_y * mask


def avgpool2_forward(x: np.ndarray):
    """2x2 average pooling with stride 2; axes of size 1 pass through.

    Odd trailing rows/columns are dropped. Returns (y, cache).
    """
    n, c, h, w = x.shape
    fh = 2 if h >= 2 else 1
    fw = 2 if w >= 2 else 1
    h2, w2 = h // fh, w // fw
    xc = x[:, :, : h2 * fh, : w2 * fw]
    y = xc.reshape(n, c, h2, fh, w2, fw).mean(axis=(3, 5))
    return y, (x.shape, fh, fw)


def avgpool2_backward(grad_y: np.ndarray, cache) -> np.ndarray:
    x_shape, fh, fw = cache
    n, c, h, w = x_shape
    h2, w2 = grad_y.shape[2], grad_y.shape[3]
    gx = np.zeros(x_shape, dtype=np.float64)
    spread = np.repeat(np.repeat(grad_y, fh, axis=2), fw, axis=3) / (fh * fw)
    gx[:, :, : h2 * fh, : w2 * fw] = spread
    return gx


def he_init(rng: np.random.Generator, c_out: int, c_in: int, ksize: int) -> np.ndarray:
    """Fan-in scaled normal weights for a conv layer."""
    fan_in = c_in * ksize * ksize
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, ksize, ksize))


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NumericOverflowError(f"non-finite values in {what}")
