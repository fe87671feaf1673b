"""Multi-feature training loss.

Three terms, all with mean-per-pixel norms so the weights are independent
of tile size:

* cycle despeckling: each sub-image's network output is supervised by the
  next sub-image in a cyclic order, either as a plain squared error or in a
  log-normalized form whose per-pair denominators depend only on the data;
* regularization: the full-resolution network output (evaluated without
  gradient) is compared against the despeckled sub-images scattered back to
  full resolution, steering the sub-image path toward globally consistent
  results;
* perceptual: squared feature-map distance between each of the first two
  sub-images and its despeckled output.

The perceptual feature extractor stands in for a VGG16 pre-trained on
actual SAR intensity corpora, which is not reproducible at desk scale.
Instead it is a fixed, seeded, randomly initialized 3-stage convolutional
stack; random fixed features still measure structural agreement, but they
are not learned SAR features, so treat the perceptual term accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePairError
from .nn import (
    avgpool2_backward,
    avgpool2_forward,
    conv2d_backward,
    conv2d_forward,
    he_init,
    relu_backward,
    relu_forward,
)

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "FeatureExtractor",
    "cyc_desp_plain",
    "cyc_desp_log",
    "reg_loss",
    "perceptual_loss",
    "total_loss",
    "LOG_EPS",
]

# floor inside both logs of the log-form cycle term; keeps the ratio total
# at exact fit
LOG_EPS = 1e-8

# a log denominator this close to zero flips the term's sign: reject the pair
_DEN_MIN = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("loss weights must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    cyc: float
    reg: float
    per: float
    total: float

    def to_dict(self) -> dict:
        return {"cyc": self.cyc, "reg": self.reg, "per": self.per, "total": self.total}


def _as_stack(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError("expected a sequence of images")
    return arr


def _msd(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def cyc_desp_plain(outputs, targets) -> float:
    """Plain cycle term: sum over pairs of mean-per-pixel squared error.

    ``targets[i]`` is the cycle successor of the image behind ``outputs[i]``
    (the caller rotates the sub-image sequence by one, with wraparound).
    """
    return cyc_desp_plain_grad(outputs, targets)[0]


def cyc_desp_plain_grad(outputs, targets):
    out = _as_stack(outputs)
    tgt = _as_stack(targets)
    if out.shape != tgt.shape:
        raise ValueError(f"shape mismatch: outputs {out.shape} vs targets {tgt.shape}")
    if out.shape[0] < 2:
        raise ValueError("cycle term needs at least 2 pairs")
    per_pixel = out[0].size
    diff = out - tgt
    value = float(np.einsum("p...,p...->p", diff, diff).sum() / per_pixel)
    grad = 2.0 * diff / per_pixel
    return value, grad


def cyc_desp_log(outputs, targets) -> float:
    """Log-normalized cycle term: sum of log(eps + msd_out) / log(eps + msd_in).

    The denominator of pair i is the log mean squared difference between
    the raw sub-images y_i and y_{i+1}; it carries no gradient and is
    recoverable from the rotated target sequence alone. A denominator with
    magnitude below 1e-6 makes the ratio ill-posed and raises
    DegeneratePairError naming the pair.
    """
    return cyc_desp_log_grad(outputs, targets)[0]


def cyc_desp_log_grad(outputs, targets):
    out = _as_stack(outputs)
    tgt = _as_stack(targets)
    if out.shape != tgt.shape:
        raise ValueError(f"shape mismatch: outputs {out.shape} vs targets {tgt.shape}")
    m = out.shape[0]
    if m < 2:
        raise ValueError("cycle term needs at least 2 pairs")
    per_pixel = out[0].size
    value = 0.0
    grad = np.zeros_like(out)
    for i in range(m):
        # targets is the y-sequence rotated by one: y_i == targets[i-1]
        msd_in = _msd(tgt[i - 1], tgt[i])
        den = float(np.log(LOG_EPS + msd_in))
        if abs(den) < _DEN_MIN:
            raise DegeneratePairError(
                i, f"cycle pair {i}: log denominator {den:.3e} is below {_DEN_MIN}"
            )
        diff = out[i] - tgt[i]
        msd_out = float(np.mean(diff**2))
        value += np.log(LOG_EPS + msd_out) / den
        grad[i] = (2.0 * diff / per_pixel) / ((LOG_EPS + msd_out) * den)
    return float(value), grad


def reg_loss(full_image_out, mapped_stack_out) -> float:
    """Mean-per-pixel squared distance between the two full-size branches."""
    return reg_loss_grad(full_image_out, mapped_stack_out)[0]


def reg_loss_grad(full_image_out, mapped_stack_out):
    """Returns (value, grad wrt mapped branch, grad wrt full branch).

    The full-image branch is a stop-gradient constraint: its gradient is
    identically zero by definition, returned explicitly so callers can
    assert the contract.
    """
    full = np.asarray(full_image_out, dtype=np.float64)
    mapped = np.asarray(mapped_stack_out, dtype=np.float64)
    if full.shape != mapped.shape:
        raise ValueError(f"shape mismatch: {full.shape} vs {mapped.shape}")
    diff = mapped - full
    value = float(np.mean(diff**2))
    grad_mapped = 2.0 * diff / diff.size
    grad_full = np.zeros_like(full)
    return value, grad_mapped, grad_full


class FeatureExtractor:
    """Fixed random multi-scale conv stack standing in for a learned network.

    Three stages of 3x3 convolution + ReLU + 2x2 average pooling with
    channel widths (16, 32, 64) by default. Weights are drawn once from the
    seed and never trained; the extractor is immutable and shareable.
    """

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (16, 32, 64), ksize: int = 3):
        if len(channels) < 1 or channels[-1] < 8:
            raise ValueError("feature extractor needs >= 8 output channels")
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.channels = tuple(channels)
        self.ksize = ksize
        self.weights = []
        self.biases = []
        c_in = 1
        for c_out in channels:
            self.weights.append(he_init(rng, c_out, c_in, ksize))
            self.biases.append(np.zeros(c_out))
            c_in = c_out

    @property
    def output_channels(self) -> int:
        return self.channels[-1]

    def forward(self, x: np.ndarray):
        """x: (N, 1, H, W) -> (features (N, C, H', W'), cache)."""
        cache = []
        h = x
        for w, b in zip(self.weights, self.biases):
            h, conv_cache = conv2d_forward(h, w, b, dilation=1)
            h, mask = relu_forward(h)
            h, pool_cache = avgpool2_forward(h)
            cache.append((conv_cache, mask, pool_cache))
        return h, cache

    def backward(self, grad_features: np.ndarray, cache) -> np.ndarray:
        g = grad_features
        for conv_cache, mask, pool_cache in reversed(cache):
            g = avgpool2_backward(g, pool_cache)
            g = relu_backward(g, mask)
            g, _, _ = conv2d_backward(g, conv_cache)
        return g

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


def perceptual_loss(phi: FeatureExtractor, pairs) -> float:
    """Sum over pairs of mean feature-map squared distance.

    ``pairs`` is a sequence of (network_output, raw_subimage) rasters; the
    cycle convention uses the first two sub-images.
    """
    return perceptual_loss_grad(phi, pairs)[0]


def perceptual_loss_grad(phi: FeatureExtractor, pairs):
    value = 0.0
    grads = []
    for out_img, ref_img in pairs:
        o = np.asarray(out_img, dtype=np.float64)
        r = np.asarray(ref_img, dtype=np.float64)
        if o.shape != r.shape:
            raise ValueError(f"shape mismatch in perceptual pair: {o.shape} vs {r.shape}")
        fo, cache = phi.forward(o[None, None])
        fr = phi.features(r[None, None])
        diff = fo - fr
        value += float(np.mean(diff**2))
        grad_feat = 2.0 * diff / diff.size
        grads.append(phi.backward(grad_feat, cache)[0, 0])
    return value, grads


def total_loss(
    outputs,
    targets,
    full_image_out,
    mapped_stack_out,
    *,
    phi: FeatureExtractor | None,
    weights: LossWeights = LossWeights(),
    log_form: bool = False,
    perceptual_refs=None,
) -> LossBreakdown:
    """Assemble the three-term loss; ``total = cyc + alpha*reg + beta*per``.

    ``perceptual_refs`` supplies the (output, reference) pairs for the
    perceptual term; it defaults to the first two (output, target-source)
    pairs, i.e. each output against its own sub-image. When ``phi`` is None
    or beta is zero the perceptual term is 0.
    """
    cyc = cyc_desp_log(outputs, targets) if log_form else cyc_desp_plain(outputs, targets)
    reg = reg_loss(full_image_out, mapped_stack_out)
    if phi is not None and weights.beta != 0.0:
        if perceptual_refs is None:
            tgt = _as_stack(targets)
            out = _as_stack(outputs)
            # targets is the rotated sequence, so y_i == targets[i-1]
            perceptual_refs = [(out[0], tgt[-1]), (out[1], tgt[0])]
        per = perceptual_loss(phi, perceptual_refs)
    else:
        per = 0.0
    total = cyc + weights.alpha * reg + weights.beta * per
    return LossBreakdown(cyc=float(cyc), reg=float(reg), per=float(per), total=float(total))
