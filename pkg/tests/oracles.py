"""Independent reference implementations used to pin expected test values.

Everything here is deliberately naive (explicit loops, direct formulas) and
must stay independent of the library code paths it is used to check. The
only shared import is the scalar ``angle`` function, whose own contract is
pinned by direct trivial-value tests.
"""

from __future__ import annotations

import numpy as np

from sdsar.pcorr import angle


def pcorr_exhaustive(scalars, vectors):
    """Direct triple-loop evaluation of the projection correlation.

    Computes a_ijk / b_ijk for every triple, double-centers each k-slice
    with explicit sums, and forms the covariance and conditional variances
    by brute force. O(n^3) memory and far slower than the library path; for
    oracle use at n <= 12.
    """
    x = np.asarray(scalars, dtype=np.float64)
    y = np.asarray(vectors, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = len(x)
    a = np.zeros((n, n, n))
    b = np.zeros((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                a[i, j, k] = float(x[i] <= x[k]) * float(x[j] <= x[k])
                b[i, j, k] = angle(y[i] - y[k], y[j] - y[k])
    A = np.zeros_like(a)
    B = np.zeros_like(b)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                a_i = sum(a[i, jj, k] for jj in range(n)) / n
                a_j = sum(a[ii, j, k] for ii in range(n)) / n
                a_all = sum(a[ii, jj, k] for ii in range(n) for jj in range(n)) / n**2
                A[i, j, k] = a[i, j, k] - a_i - a_j + a_all
                b_i = sum(b[i, jj, k] for jj in range(n)) / n
                b_j = sum(b[ii, j, k] for ii in range(n)) / n
                b_all = sum(b[ii, jj, k] for ii in range(n) for jj in range(n)) / n**2
                B[i, j, k] = b[i, j, k] - b_i - b_j + b_all
    pcov_sq = sum(
        A[i, j, k] * B[i, j, k] for i in range(n) for j in range(n) for k in range(n)
    ) / n**3
    cvar_x_sq = sum(
        A[i, j, k] ** 2 for i in range(n) for j in range(n) for k in range(n)
    ) / n**3
    cvar_y_sq = sum(
        B[i, j, k] ** 2 for i in range(n) for j in range(n) for k in range(n)
    ) / n**3
    pc_sq = pcov_sq / np.sqrt(cvar_x_sq * cvar_y_sq)
    return {
        "pcov_sq": pcov_sq,
        "cvar_x_sq": cvar_x_sq,
        "cvar_y_sq": cvar_y_sq,
        "pc": np.sqrt(max(pc_sq, 0.0)),
    }


def mean_sq_diff_naive(a, b):
    """Per-pixel mean squared difference by explicit accumulation."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    acc = 0.0
    for i in range(a.size):
        acc += (a[i] - b[i]) ** 2
    return acc / a.size


def central_difference_gradient(fn, theta, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        step = h * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        grad[i] = (fn(up) - fn(down)) / (2 * step)
    return grad


def band_energy(pixels, cutoff):
    """Spectral energy above a radial cutoff, on the same normalized grid
    the decorrelator uses (diagonal Nyquist at max(W,H)/sqrt(2))."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    diag = np.sqrt((h / 2) ** 2 + (w / 2) ** 2)
    r = r * (max(h, w) / np.sqrt(2.0) / diag)
    spec = np.abs(np.fft.fft2(pixels)) ** 2
    return float(spec[r > cutoff].sum())
