"""Reference despeckling network with exact gradients and its training loop.

The network is a small dilated-convolution residual stack: 7 layers of 3x3
kernels, 32 channels, dilations (1,2,3,4,3,2,1), ReLU between layers, and
``output = input - residual_branch(input)``. The final layer initializes to
zero so training starts at the identity, which keeps early same-mean
diagnostics meaningful.

Training follows the self-supervised recipe: every epoch draws a fresh
random sub-sampling of each tile, the cycle/regularization/perceptual loss
is evaluated on the sub-images, and Adam updates the parameters under a
halve-every-20-epochs learning-rate schedule. With the log-form loss the
whole pipeline operates on log(1 + x) intensities and inverts the transform
at inference, which damps model-mismatch deviations and stabilizes
training.

All arithmetic is float64. Runs are bit-reproducible for a fixed seed and a
fixed BLAS configuration; per-tile randomness is derived statelessly from
(seed, epoch, tile index), so resuming from a checkpoint replays the
interrupted run exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatVersionError, NumericOverflowError, TrainingDivergedError
from .image import IntensityImage
from .loss import (
    FeatureExtractor,
    LossBreakdown,
    LossWeights,
    cyc_desp_log_grad,
    cyc_desp_plain_grad,
    perceptual_loss_grad,
    reg_loss_grad,
)
from .nn import check_finite, conv2d_backward, conv2d_forward, he_init, relu_backward, relu_forward
from .sampler import DecorrelatorSpec, apply_decorrelator, ra_sample, scatter_subimages

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "DespecklerParams",
    "TrainConfig",
    "TrainSample",
    "default_network",
    "tiny_network",
    "init_params",
    "forward",
    "despeckle",
    "make_train_sample",
    "loss_gradient",
    "evaluate_loss",
    "train",
    "learning_rate_at",
    "save_params",
    "load_params",
    "save_checkpoint",
    "load_checkpoint",
]

PARAMS_MAGIC = b"SDSP"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack description; input is always 1 channel, output must be 1."""

    layers: tuple[LayerSpec, ...]
    residual: bool = True

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.layers[-1].out_channels != 1:
            raise ValueError("last layer must emit 1 channel")
        for i, layer in enumerate(self.layers):
            if layer.out_channels < 1:
                raise ValueError(f"layer {i}: channels must be >= 1")
            if layer.kernel_size < 1 or layer.kernel_size % 2 == 0:
                raise ValueError(f"layer {i}: kernel size must be odd and >= 1")
            if layer.dilation < 1:
                raise ValueError(f"layer {i}: dilation must be >= 1")

    def in_channels(self, index: int) -> int:
        return 1 if index == 0 else self.layers[index - 1].out_channels

    def max_pad(self) -> int:
        return max(l.dilation * (l.kernel_size - 1) // 2 for l in self.layers)

    def param_count(self) -> int:
        total = 0
        for i, layer in enumerate(self.layers):
            total += layer.out_channels * (self.in_channels(i) * layer.kernel_size**2 + 1)
        return total

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"out_channels": l.out_channels, "kernel_size": l.kernel_size, "dilation": l.dilation}
                for l in self.layers
            ],
            "residual": self.residual,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        layers = tuple(
            LayerSpec(int(l["out_channels"]), int(l["kernel_size"]), int(l["dilation"]))
            for l in d["layers"]
        )
        return NetworkSpec(layers=layers, residual=bool(d["residual"]))


def default_network() -> NetworkSpec:
    """7 layers, 32 channels, dilations 1-2-3-4-3-2-1, residual output."""
    dil = (1, 2, 3, 4, 3, 2, 1)
    layers = tuple(LayerSpec(32 if i < 6 else 1, 3, d) for i, d in enumerate(dil))
    return NetworkSpec(layers=layers)


def tiny_network(channels: int = 4) -> NetworkSpec:
    """3-layer net for gradient checks and fast tests."""
    return NetworkSpec(
        layers=(LayerSpec(channels, 3, 1), LayerSpec(channels, 3, 2), LayerSpec(1, 3, 1))
    )


@dataclass
class DespecklerParams:
    """Flat parameter vector plus its layout and the input-domain transform."""

    spec: NetworkSpec
    values: np.ndarray
    input_transform: str = "linear"  # or "log1p"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.spec.param_count(),):
            raise ValueError(
                f"parameter vector has {vals.shape}, spec wants ({self.spec.param_count()},)"
            )
        if not np.isfinite(vals).all():
            raise ValueError("parameters must be finite")
        if self.input_transform not in ("linear", "log1p"):
            raise ValueError(f"unknown input transform {self.input_transform!r}")
        self.values = vals

    def layer_views(self):
        """Yield (weight_view, bias_view) per layer, shaped from the flat vector."""
        out = []
        offset = 0
        for i, layer in enumerate(self.spec.layers):
            c_in = self.spec.in_channels(i)
            k = layer.kernel_size
            w_size = layer.out_channels * c_in * k * k
            w = self.values[offset : offset + w_size].reshape(layer.out_channels, c_in, k, k)
            offset += w_size
            b = self.values[offset : offset + layer.out_channels]
            offset += layer.out_channels
            out.append((w, b))
        return out

    def copy(self) -> "DespecklerParams":
        return DespecklerParams(self.spec, self.values.copy(), self.input_transform)


def init_params(
    spec: NetworkSpec, seed: int = 0, input_transform: str = "linear"
) -> DespecklerParams:
    """He-initialized weights, zero biases, final layer all zero (identity start)."""
    rng = np.random.default_rng(seed)
    chunks = []
    last = len(spec.layers) - 1
    for i, layer in enumerate(spec.layers):
        c_in = spec.in_channels(i)
        if i == last:
            w = np.zeros((layer.out_channels, c_in, layer.kernel_size, layer.kernel_size))
        else:
            w = he_init(rng, layer.out_channels, c_in, layer.kernel_size)
        chunks.append(w.ravel())
        chunks.append(np.zeros(layer.out_channels))
    return DespecklerParams(spec, np.concatenate(chunks), input_transform)


def _forward_batch(params: DespecklerParams, x: np.ndarray, need_cache: bool):
    """Run the network on an (N, 1, H, W) batch; returns (output, caches)."""
    views = params.layer_views()
    last = len(views) - 1
    h = x
    caches = [] if need_cache else None
    for i, (w, b) in enumerate(views):
        h, conv_cache = conv2d_forward(h, w, b, params.spec.layers[i].dilation)
        mask = None
        if i != last:
            h, mask = relu_forward(h)
        if need_cache:
            caches.append((conv_cache, mask))
    out = x - h if params.spec.residual else h
    check_finite(out, "network output")
    return out, caches


def _backward_batch(params: DespecklerParams, grad_out: np.ndarray, caches) -> np.ndarray:
    """Exact reverse-mode gradient wrt the flat parameter vector."""
    g = -grad_out if params.spec.residual else grad_out
    grads = [None] * len(caches)
    for i in range(len(caches) - 1, -1, -1):
        conv_cache, mask = caches[i]
        if mask is not None:
            g = relu_backward(g, mask)
        g, gw, gb = conv2d_backward(g, conv_cache)
        grads[i] = (gw, gb)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return flat


def forward(params: DespecklerParams, img: IntensityImage, clamp: bool = False) -> np.ndarray:
    """Single-image forward pass in the network's own domain.

    Returns a raw raster (it may be negative unless ``clamp`` is set); use
    ``despeckle`` for the full inference path including domain transforms.
    """
    out, _ = _forward_batch(params, img.pixels[None, None], need_cache=False)
    out = out[0, 0]
    return np.maximum(out, 0.0) if clamp else out


def despeckle(params: DespecklerParams, img: IntensityImage) -> IntensityImage:
    """Full-resolution inference: domain transform, forward, clamp to >= 0."""
    x = img.pixels
    if params.input_transform == "log1p":
        x = np.log1p(x)
    out, _ = _forward_batch(params, x[None, None], need_cache=False)
    out = out[0, 0]
    if params.input_transform == "log1p":
        out = np.expm1(out)
    return IntensityImage(np.maximum(out, 0.0), looks=img.looks)


@dataclass(frozen=True)
class TrainSample:
    """One tile's training material, already in the network's input domain."""

    inputs: np.ndarray  # (k^2, ph, pw) network inputs (decorrelated if wired)
    targets: np.ndarray  # (k^2, ph, pw) raw sub-images
    source: np.ndarray  # (Hc, Wc) cropped source tile
    positions: np.ndarray  # (k^2, ph, pw, 2)
    key: int = 0  # canonical reduction order across a batch


def make_train_sample(
    tile: IntensityImage,
    k: int,
    seed: int,
    *,
    decorrelator: DecorrelatorSpec | None = None,
    log_domain: bool = False,
    key: int = 0,
) -> TrainSample:
    """Sub-sample a tile and prepare network inputs/targets.

    The decorrelator, when given, is applied to the input side of every
    training pair (the raw sub-images stay as targets). With ``log_domain``
    everything is mapped through log(1 + x) after decorrelation.
    """
    stack = ra_sample(tile, k, seed)
    targets = stack.subimages
    if decorrelator is not None:
        inputs = np.stack([apply_decorrelator(s, decorrelator) for s in targets])
    else:
        inputs = targets.copy()
    hc, wc = stack.source_shape
    source = tile.pixels[:hc, :wc]
    if log_domain:
        inputs = np.log1p(inputs)
        targets = np.log1p(targets)
        source = np.log1p(source)
    return TrainSample(
        inputs=inputs,
        targets=targets,
        source=source,
        positions=stack.positions,
        key=key,
    )


def _sample_loss(
    params: DespecklerParams,
    sample: TrainSample,
    weights: LossWeights,
    phi: FeatureExtractor | None,
    log_form: bool,
    stopgrad_params: DespecklerParams,
    need_grad: bool,
):
    """Loss (and optionally the exact parameter gradient) for one tile."""
    m = sample.inputs.shape[0]
    out_batch, caches = _forward_batch(params, sample.inputs[:, None], need_cache=need_grad)
    out = out_batch[:, 0]
    targets_rot = np.roll(sample.targets, -1, axis=0)

    if log_form:
        cyc, cyc_grad = cyc_desp_log_grad(out, targets_rot)
    else:
        cyc, cyc_grad = cyc_desp_plain_grad(out, targets_rot)

    # full-image branch: evaluated without gradient (stop-gradient constraint)
    full_out, _ = _forward_batch(
        stopgrad_params, sample.source[None, None], need_cache=False
    )
    mapped = scatter_subimages(out, sample.positions, sample.source.shape)
    reg, reg_grad_mapped, _ = reg_loss_grad(full_out[0, 0], mapped)

    per = 0.0
    per_grads = None
    if phi is not None and weights.beta != 0.0:
        pairs = [(out[0], sample.targets[0]), (out[1], sample.targets[1])]
        per, per_grads = perceptual_loss_grad(phi, pairs)

    total = cyc + weights.alpha * reg + weights.beta * per
    breakdown = LossBreakdown(cyc=float(cyc), reg=float(reg), per=float(per), total=float(total))
    if not need_grad:
        return breakdown, None

    dout = cyc_grad.copy()
    if weights.alpha != 0.0:
        rows = sample.positions[..., 0].astype(np.intp)
        cols = sample.positions[..., 1].astype(np.intp)
        dout += weights.alpha * reg_grad_mapped[rows, cols]
    if per_grads is not None:
        dout[0] += weights.beta * per_grads[0]
        dout[1] += weights.beta * per_grads[1]
    grad = _backward_batch(params, dout[:, None], caches)
    return breakdown, grad


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(
        cyc=sum(p.cyc for p in parts) / n,
        reg=sum(p.reg for p in parts) / n,
        per=sum(p.per for p in parts) / n,
        total=sum(p.total for p in parts) / n,
    )


def loss_gradient(
    params: DespecklerParams,
    samples: list[TrainSample],
    weights: LossWeights = LossWeights(),
    phi: FeatureExtractor | None = None,
    log_form: bool = False,
):
    """Exact gradient of the batch-mean total loss wrt the flat parameters.

    Samples are reduced in ascending ``key`` order regardless of list order,
    so gradient accumulation is independent of batch item permutation.
    Returns (gradient vector, mean LossBreakdown).
    """
    if not samples:
        raise ValueError("empty batch")
    ordered = sorted(samples, key=lambda s: s.key)
    grad = np.zeros_like(params.values)
    parts = []
    for sample in ordered:
        breakdown, g = _sample_loss(
            params, sample, weights, phi, log_form, stopgrad_params=params, need_grad=True
        )
        grad += g
        parts.append(breakdown)
    grad /= len(samples)
    return grad, _mean_breakdown(parts)


def evaluate_loss(
    params: DespecklerParams,
    samples: list[TrainSample],
    weights: LossWeights = LossWeights(),
    phi: FeatureExtractor | None = None,
    log_form: bool = False,
    stopgrad_params: DespecklerParams | None = None,
) -> LossBreakdown:
    """Batch-mean loss value only.

    ``stopgrad_params`` pins the full-image regularization branch to a fixed
    parameter vector; finite-difference oracles pass the unperturbed
    parameters here to replicate the stop-gradient objective.
    """
    if not samples:
        raise ValueError("empty batch")
    sg = stopgrad_params if stopgrad_params is not None else params
    parts = [
        _sample_loss(params, s, weights, phi, log_form, stopgrad_params=sg, need_grad=False)[0]
        for s in sorted(samples, key=lambda s: s.key)
    ]
    return _mean_breakdown(parts)


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the full-scale recipe."""

    learning_rate: float = 3e-4
    decay_epochs: int = 20  # halve the rate every this many epochs
    batch_size: int = 4
    epochs: int = 300
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    tile_size: int = 256
    k: int = 2
    log_form: bool = False
    decorrelate_inputs: bool = True
    phi_seed: int = 0
    checkpoint_every: int = 10
    network: NetworkSpec = field(default_factory=default_network)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.decay_epochs < 1:
            raise ValueError("learning rate and decay period must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.tile_size < self.k or self.tile_size % self.k != 0:
            raise ValueError("tile size must be a positive multiple of k")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta)


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Halving schedule: lr(e) = lr0 * 2^-(e // decay); epochs are 0-based."""
    return config.learning_rate * 2.0 ** (-(epoch // config.decay_epochs))


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _prepare_tile(
    img: IntensityImage, tile_size: int, k: int, rng: np.random.Generator
) -> IntensityImage:
    """Random tile crop; images smaller than the tile are used whole."""
    h, w = img.shape
    th = min(tile_size, (h // k) * k)
    tw = min(tile_size, (w // k) * k)
    if th < k or tw < k:
        raise ValueError(f"image {h}x{w} too small for k={k}")
    r = int(rng.integers(0, h - th + 1))
    c = int(rng.integers(0, w - tw + 1))
    return IntensityImage(img.pixels[r : r + th, c : c + tw], looks=img.looks)


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def step(self, values: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.BETA1 * self.m + (1 - self.BETA1) * grad
        self.v = self.BETA2 * self.v + (1 - self.BETA2) * grad * grad
        mhat = self.m / (1 - self.BETA1**self.t)
        vhat = self.v / (1 - self.BETA2**self.t)
        values -= lr * mhat / (np.sqrt(vhat) + self.EPS)


def train(
    config: TrainConfig,
    dataset: list[IntensityImage],
    *,
    decorrelator: DecorrelatorSpec | None = None,
    log_file=None,
    checkpoint_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    initial_params: DespecklerParams | None = None,
):
    """Train the reference network; returns (params, history).

    Every epoch visits all tiles in a seeded random order, re-sampling each
    tile with a fresh sub-sampling seed derived from (seed, epoch, tile), so
    interrupted runs resumed from a checkpoint replay bit-exactly.
    ``log_file`` receives one JSON line per optimizer step.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    transform = "log1p" if config.log_form else "linear"
    phi = FeatureExtractor(seed=config.phi_seed) if config.beta != 0.0 else None
    if config.decorrelate_inputs and decorrelator is None:
        decorrelator = DecorrelatorSpec()
    if not config.decorrelate_inputs:
        decorrelator = None

    if resume_from is not None:
        params, adam, start_epoch, history = load_checkpoint(resume_from)
        if params.spec != config.network:
            raise FormatVersionError("checkpoint network does not match the configured one")
    else:
        params = (
            initial_params.copy()
            if initial_params is not None
            else init_params(config.network, seed=config.seed, input_transform=transform)
        )
        adam = _AdamState(m=np.zeros_like(params.values), v=np.zeros_like(params.values))
        start_epoch = 0
        history = []

    step = start_epoch * -(-len(dataset) // config.batch_size)
    for epoch in range(start_epoch, config.epochs):
        lr = learning_rate_at(config, epoch)
        order_rng = np.random.default_rng(_derived_seed(config.seed, epoch, 0xE0))
        order = order_rng.permutation(len(dataset))
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo : lo + config.batch_size]
            samples = []
            for tile_idx in batch_idx:
                tile_seed = _derived_seed(config.seed, epoch, int(tile_idx))
                tile_rng = np.random.default_rng(tile_seed)
                tile = _prepare_tile(dataset[tile_idx], config.tile_size, config.k, tile_rng)
                samples.append(
                    make_train_sample(
                        tile,
                        config.k,
                        seed=tile_seed + 1,
                        decorrelator=decorrelator,
                        log_domain=config.log_form,
                        key=int(tile_idx),
                    )
                )
            grad, breakdown = loss_gradient(
                params, samples, config.weights, phi, config.log_form
            )
            if not np.isfinite(breakdown.total) or not np.isfinite(grad).all():
                raise TrainingDivergedError(epoch, f"non-finite loss or gradient at epoch {epoch}")
            adam.step(params.values, grad, lr)
            if not np.isfinite(params.values).all():
                raise TrainingDivergedError(epoch, f"parameters diverged at epoch {epoch}")
            row = {"epoch": epoch, "step": step, "lr": lr, **breakdown.to_dict()}
            history.append(row)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")
            step += 1
        if checkpoint_dir is not None and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(
                Path(checkpoint_dir) / f"checkpoint_{epoch + 1:04d}.npz",
                params,
                adam,
                epoch + 1,
                history,
            )
    return params, history


def save_params(path: str | Path, params: DespecklerParams) -> None:
    """Binary format: magic, version, JSON header, float64 LE weights."""
    header = dict(params.spec.to_dict(), input_transform=params.input_transform)
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<II", PARAMS_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path: str | Path) -> DespecklerParams:
    data = Path(path).read_bytes()
    if data[:4] != PARAMS_MAGIC:
        raise FormatVersionError(f"{path}: bad magic {data[:4]!r}, expected {PARAMS_MAGIC!r}")
    version, blob_len = struct.unpack("<II", data[4:12])
    if version != PARAMS_VERSION:
        raise FormatVersionError(f"{path}: unsupported version {version}")
    header = json.loads(data[12 : 12 + blob_len].decode())
    spec = NetworkSpec.from_dict(header)
    values = np.frombuffer(data[12 + blob_len :], dtype="<f8")
    if values.size != spec.param_count():
        raise FormatVersionError(
            f"{path}: {values.size} weights for a spec wanting {spec.param_count()}"
        )
    return DespecklerParams(spec, values.copy(), header.get("input_transform", "linear"))


def save_checkpoint(path, params: DespecklerParams, adam: _AdamState, epoch: int, history) -> None:
    np.savez(
        path,
        spec=json.dumps(dict(params.spec.to_dict(), input_transform=params.input_transform)),
        values=params.values,
        adam_m=adam.m,
        adam_v=adam.v,
        adam_t=adam.t,
        epoch=epoch,
        history=json.dumps(history),
    )


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["spec"]))
        spec = NetworkSpec.from_dict(header)
        params = DespecklerParams(
            spec, data["values"].copy(), header.get("input_transform", "linear")
        )
        adam = _AdamState(m=data["adam_m"].copy(), v=data["adam_v"].copy(), t=int(data["adam_t"]))
        epoch = int(data["epoch"])
        history = json.loads(str(data["history"]))
    return params, adam, epoch, history
