"""Sub-image sampling for self-supervised training pairs.

``ra_sample`` partitions an image into k-by-k patches, shuffles the pixels
inside every patch independently, and collects same-slot pixels into k^2
sub-images. Each sub-image sees one uniformly random pixel per patch, so on
homogeneous speckle the difference between any two sub-images is zero-mean
noise rather than scene texture. ``ordered_sample`` is the no-shuffle
baseline whose difference images leak texture (a gradient-like map on any
smooth scene).

Every sampled pixel's source coordinates are recorded so that a despeckled
stack can be scattered back to full resolution (``global_upsample``), and so
the sampling is exactly invertible.

The decorrelator is a radial low-pass applied in the 2-D DFT domain with
gain ``gain / (offset + (f / cutoff)^(2*order))`` inside the cutoff and zero
outside. Frequencies are measured as radial DFT bin indices, normalized so
the image diagonal Nyquist sits at ``max(W, H) / sqrt(2)``.

Trailing rows/columns that do not fill a whole patch are cropped, never
padded; padding would inject synthetic pixels and bias the sub-image
difference statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptedStackError, DegenerateInputError
from .image import IntensityImage, read_raw, write_raw
from .pcorr import PCSample, PCStatistic, projection_correlation

__all__ = [
    "SubImageStack",
    "DecorrelatorSpec",
    "ra_sample",
    "ordered_sample",
    "decorrelate",
    "apply_decorrelator",
    "global_upsample",
    "scatter_subimages",
    "pair_probe_sample",
    "pair_independence_probe",
    "save_stack",
    "load_stack",
]


@dataclass(frozen=True)
class DecorrelatorSpec:
    """Radial Butterworth-style low-pass in the DFT domain.

    ``cutoff`` is in radial DFT bin index units (the default 240 is gentle
    on 256x256 tiles, whose diagonal Nyquist index is ~181). ``gain`` is the
    numerator, ``offset`` the denominator constant; ``order`` N gives the
    rolloff exponent 2N.
    """

    cutoff: float = 240.0
    gain: float = 1.0
    offset: float = 1.0
    order: int = 2

    def __post_init__(self):
        if self.cutoff <= 0 or self.gain <= 0 or self.offset <= 0:
            raise ValueError("cutoff, gain and offset must all be > 0")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")

    def response(self, f: np.ndarray) -> np.ndarray:
        """Filter gain at radial frequency index f (elementwise)."""
        f = np.asarray(f, dtype=np.float64)
        h = self.gain / (self.offset + (f / self.cutoff) ** (2 * self.order))
        return np.where(f <= self.cutoff, h, 0.0)

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "gain": self.gain,
            "offset": self.offset,
            "order": self.order,
        }


@dataclass(frozen=True)
class SubImageStack:
    """k^2 sub-images plus the source position of every sampled pixel.

    ``subimages`` has shape (k^2, H//k, W//k); ``positions`` has shape
    (k^2, H//k, W//k, 2) holding (source_row, source_col) pairs that form a
    bijection onto the cropped source grid.
    """

    k: int
    subimages: np.ndarray
    positions: np.ndarray
    source_shape: tuple[int, int]
    looks: int | None = None

    def __post_init__(self):
        subs = np.asarray(self.subimages, dtype=np.float64)
        pos = np.asarray(self.positions, dtype=np.uint32)
        k = self.k
        if k < 2:
            raise ValueError(f"k must be >= 2, got {k}")
        if subs.ndim != 3 or subs.shape[0] != k * k:
            raise ValueError(f"expected {k * k} sub-images, got shape {subs.shape}")
        if pos.shape != subs.shape + (2,):
            raise ValueError(f"positions shape {pos.shape} does not match sub-images")
        hs, ws = subs.shape[1:]
        if self.source_shape != (hs * k, ws * k):
            raise ValueError(
                f"source_shape {self.source_shape} inconsistent with {k}x ({hs}, {ws})"
            )
        object.__setattr__(self, "subimages", subs)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.k * self.k

    @property
    def sub_shape(self) -> tuple[int, int]:
        return self.subimages.shape[1], self.subimages.shape[2]

    def image(self, i: int) -> IntensityImage:
        return IntensityImage(self.subimages[i], looks=self.looks)


def _crop_to_patches(pixels: np.ndarray, k: int) -> np.ndarray:
    """Crop to whole patches and lay out as (n_patches, k*k) slot rows."""
    h, w = pixels.shape
    hs, ws = h // k, w // k
    if hs < 1 or ws < 1:
        raise ValueError(f"image {h}x{w} smaller than one {k}x{k} patch")
    crop = pixels[: hs * k, : ws * k]
    # (hs, k, ws, k) -> (hs, ws, k, k) -> (hs*ws, k*k)
    return crop.reshape(hs, k, ws, k).swapaxes(1, 2).reshape(hs * ws, k * k)


def _positions_grid(h: int, w: int, k: int) -> np.ndarray:
    """Source coordinates of every patch slot, shape (n_patches, k*k, 2)."""
    hs, ws = h // k, w // k
    rows = np.arange(hs * k).reshape(hs, k)
    cols = np.arange(ws * k).reshape(ws, k)
    rr = np.broadcast_to(rows[:, None, :, None], (hs, ws, k, k))
    cc = np.broadcast_to(cols[None, :, None, :], (hs, ws, k, k))
    grid = np.stack([rr, cc], axis=-1)
    return grid.reshape(hs * ws, k * k, 2)


def _build_stack(y: IntensityImage, k: int, slot_of: np.ndarray) -> SubImageStack:
    """Assemble a stack given per-patch slot assignments.

    ``slot_of[p, j]`` is the intra-patch slot (raster order) whose pixel the
    j-th sub-image takes from patch p.
    """
    h, w = y.shape
    hs, ws = h // k, w // k
    patches = _crop_to_patches(y.pixels, k)
    grid = _positions_grid(h, w, k)
    npatch = patches.shape[0]
    rows = np.arange(npatch)[:, None]
    shuffled = patches[rows, slot_of]  # (npatch, k*k)
    picked = grid[rows, slot_of]  # (npatch, k*k, 2)
    subs = shuffled.T.reshape(k * k, hs, ws)
    pos = picked.transpose(1, 0, 2).reshape(k * k, hs, ws, 2)
    return SubImageStack(
        k=k,
        subimages=subs,
        positions=pos.astype(np.uint32),
        source_shape=(hs * k, ws * k),
        looks=y.looks,
    )


def ra_sample(y: IntensityImage, k: int = 2, seed: int = 0) -> SubImageStack:
    """Randomized sub-sampling: independent uniform shuffle inside each patch."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    h, w = y.shape
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than one {k}x{k} patch")
    hs, ws = h // k, w // k
    rng = np.random.default_rng(seed)
    slots = np.tile(np.arange(k * k), (hs * ws, 1))
    slot_of = rng.permuted(slots, axis=1)
    return _build_stack(y, k, slot_of)


def ordered_sample(y: IntensityImage, k: int = 2) -> SubImageStack:
    """Baseline sampler: slot j of every patch in fixed raster order."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    h, w = y.shape
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than one {k}x{k} patch")
    hs, ws = h // k, w // k
    slot_of = np.tile(np.arange(k * k), (hs * ws, 1))
    return _build_stack(y, k, slot_of)


def scatter_subimages(values: np.ndarray, positions: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Scatter sub-image pixels back to their recorded source positions.

    Raises CorruptedStackError unless every output pixel is written exactly
    once (the position map must be a bijection onto the target grid).
    """
    values = np.asarray(values, dtype=np.float64)
    pos = np.asarray(positions)
    if pos.shape != values.shape + (2,):
        raise ValueError(f"positions shape {pos.shape} does not match values {values.shape}")
    h, w = shape
    rows = pos[..., 0].ravel().astype(np.intp)
    cols = pos[..., 1].ravel().astype(np.intp)
    if rows.size != h * w:
        raise CorruptedStackError(f"{rows.size} recorded positions for {h * w} target pixels")
    if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
        raise CorruptedStackError("position map points outside the target grid")
    flat = rows * w + cols
    counts = np.bincount(flat, minlength=h * w)
    if (counts != 1).any():
        raise CorruptedStackError("position map is not a bijection onto the target grid")
    out = np.empty(h * w, dtype=np.float64)
    out[flat] = values.ravel()
    return out.reshape(h, w)


def global_upsample(stack: SubImageStack) -> IntensityImage:
    """Rebuild the cropped source image from a stack (inverse of sampling)."""
    out = scatter_subimages(stack.subimages, stack.positions, stack.source_shape)
    return IntensityImage(out, looks=stack.looks)


def _radial_bin_index(h: int, w: int) -> np.ndarray:
    """Radial DFT bin index grid, scaled so the diagonal Nyquist is max(W,H)/sqrt(2)."""
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    diag = np.sqrt((h / 2) ** 2 + (w / 2) ** 2)
    target = max(h, w) / np.sqrt(2.0)
    return r * (target / diag)


def apply_decorrelator(
    pixels: np.ndarray, spec: DecorrelatorSpec, *, clamp_negative: bool = True
) -> np.ndarray:
    """Linear core of ``decorrelate`` operating on a bare raster.

    With ``clamp_negative=False`` the output is the raw inverse transform,
    which is linear in the input (used by spectral tests).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"expected a 2-D raster, got shape {pixels.shape}")
    h, w = pixels.shape
    gain = spec.response(_radial_bin_index(h, w))
    spectrum = np.fft.fft2(pixels) * gain
    out = np.fft.ifft2(spectrum).real
    if clamp_negative:
        out = np.maximum(out, 0.0)
    return out


def decorrelate(img: IntensityImage, spec: DecorrelatorSpec) -> IntensityImage:
    """Low-pass an image with the decorrelator; ringing is clamped to >= 0."""
    return IntensityImage(apply_decorrelator(img.pixels, spec), looks=img.looks)


def pair_probe_sample(
    y: IntensityImage,
    k: int = 2,
    seed: int = 0,
    spec: DecorrelatorSpec = DecorrelatorSpec(),
    n: int = 64,
) -> PCSample:
    """Build the (decorrelated first sub-image, second sub-image) probe sample.

    Draws n random aligned pixel sites; scalars come from the decorrelated
    first sub-image, 1-D vectors from the raw second sub-image.
    """
    if n < 8:
        raise ValueError(f"probe needs n >= 8 sites, got {n}")
    stack = ra_sample(y, k, seed)
    y1 = apply_decorrelator(stack.subimages[0], spec)
    y2 = stack.subimages[1]
    if np.ptp(y1) == 0.0 or np.ptp(y2) == 0.0:
        raise DegenerateInputError("constant sub-image; independence probe undefined")
    hs, ws = stack.sub_shape
    total = hs * ws
    if n > total:
        raise ValueError(f"n={n} exceeds the {total} available sites")
    rng = np.random.default_rng(seed + 1)
    sites = rng.choice(total, size=n, replace=False)
    scalars = y1.ravel()[sites]
    vectors = y2.ravel()[sites][:, None]
    return PCSample(scalars=scalars, vectors=vectors)


def pair_independence_probe(
    y: IntensityImage,
    k: int = 2,
    seed: int = 0,
    spec: DecorrelatorSpec = DecorrelatorSpec(),
    n: int = 64,
) -> PCStatistic:
    """Projection correlation between the decorrelated and raw sub-images."""
    return projection_correlation(pair_probe_sample(y, k, seed, spec, n))


_MANIFEST = "manifest.json"
_POSITIONS = "positions.bin"


def save_stack(stack: SubImageStack, directory: str | Path) -> None:
    """Serialize a stack: raw-float sub-images, a binary position table, a manifest.

    The position table is little-endian uint32 triples (subimage index,
    source row, source col), one per pixel, ordered by sub-image then
    row-major pixel order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hs, ws = stack.sub_shape
    files = []
    for i in range(stack.count):
        name = f"sub_{i:02d}.raw"
        write_raw(directory / name, stack.image(i))
        files.append(name)
    idx = np.repeat(np.arange(stack.count, dtype=np.uint32), hs * ws)
    pos = stack.positions.reshape(-1, 2).astype(np.uint32)
    table = np.column_stack([idx, pos[:, 0], pos[:, 1]]).astype("<u4")
    (directory / _POSITIONS).write_bytes(table.tobytes())
    manifest = {
        "k": stack.k,
        "count": stack.count,
        "sub_height": hs,
        "sub_width": ws,
        "source_height": stack.source_shape[0],
        "source_width": stack.source_shape[1],
        "looks": stack.looks,
        "format": "raw",
        "subimages": files,
        "positions": _POSITIONS,
    }
    (directory / _MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def load_stack(directory: str | Path) -> SubImageStack:
    directory = Path(directory)
    manifest = json.loads((directory / _MANIFEST).read_text())
    k = int(manifest["k"])
    hs, ws = int(manifest["sub_height"]), int(manifest["sub_width"])
    subs = np.stack(
        [read_raw(directory / name).pixels for name in manifest["subimages"]]
    )
    table = np.frombuffer((directory / manifest["positions"]).read_bytes(), dtype="<u4")
    table = table.reshape(-1, 3)
    expected = np.repeat(np.arange(k * k, dtype=np.uint32), hs * ws)
    if not np.array_equal(table[:, 0], expected):
        raise CorruptedStackError("position table sub-image indices are out of order")
    pos = table[:, 1:].reshape(k * k, hs, ws, 2)
    looks = manifest.get("looks")
    return SubImageStack(
        k=k,
        subimages=subs,
        positions=pos,
        source_shape=(int(manifest["source_height"]), int(manifest["source_width"])),
        looks=int(looks) if looks else None,
    )
