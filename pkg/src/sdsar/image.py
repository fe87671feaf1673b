"""Intensity image container and file I/O.

Images are nonnegative 2-D rasters of linear-scale intensities, stored as
64-bit floats regardless of the source bit depth (metrics and losses involve
ratios that are sensitive to quantization). Two on-disk formats are
supported:

* binary PGM (``P5``), 8- or 16-bit, pixel values read as intensities;
* raw little-endian float32 rasters with a JSON sidecar
  ``{"width": W, "height": H, "looks": L}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatVersionError

__all__ = [
    "IntensityImage",
    "read_pgm",
    "write_pgm",
    "read_raw",
    "write_raw",
    "load_image",
    "save_image",
]


@dataclass(frozen=True)
class IntensityImage:
    """A nonnegative real-valued raster with an optional number of looks."""

    pixels: np.ndarray
    looks: int | None = None
    # populated when the image was read from a PGM file; preserved on save
    maxval: int | None = field(default=None, compare=False)

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float64))
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"pixels must be a non-empty 2-D raster, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("pixels must all be finite")
        if px.min() < 0:
            raise ValueError("pixels must all be >= 0")
        if self.looks is not None and self.looks < 1:
            raise ValueError(f"looks must be a positive integer, got {self.looks}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def mean(self) -> float:
        return float(self.pixels.mean())


_PGM_HEADER = re.compile(rb"^P5\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def read_pgm(path: str | Path) -> IntensityImage:
    """Read a binary (P5) PGM file. 16-bit samples are big-endian per netpbm."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise FormatVersionError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise FormatVersionError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    offset = m.end()
    count = width * height
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    if raw.size != count:
        raise FormatVersionError(f"{path}: truncated pixel data")
    pixels = raw.reshape(height, width).astype(np.float64)
    return IntensityImage(pixels, maxval=maxval)


def write_pgm(path: str | Path, img: IntensityImage, maxval: int | None = None) -> None:
    """Write a binary PGM. Values are rounded and clipped to [0, maxval]."""
    if maxval is None:
        maxval = img.maxval if img.maxval is not None else 255
    if not 0 < maxval < 65536:
        raise ValueError(f"invalid maxval {maxval}")
    q = np.clip(np.rint(img.pixels), 0, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
    Path(path).write_bytes(header + q.astype(dtype).tobytes())


def read_raw(path: str | Path) -> IntensityImage:
    """Read a raw little-endian float32 raster described by a JSON sidecar."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text())
    width, height = int(meta["width"]), int(meta["height"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != width * height:
        raise FormatVersionError(f"{path}: expected {width * height} float32 values, got {raw.size}")
    looks = meta.get("looks")
    pixels = raw.reshape(height, width).astype(np.float64)
    return IntensityImage(pixels, looks=int(looks) if looks else None)


def write_raw(path: str | Path, img: IntensityImage) -> None:
    path = Path(path)
    img.pixels.astype("<f4").tofile(path)
    meta = {"width": img.width, "height": img.height, "looks": img.looks}
    path.with_suffix(".json").write_text(json.dumps(meta) + "\n")


def load_image(path: str | Path) -> IntensityImage:
    """Dispatch on extension: ``.pgm`` binary PGM, ``.raw`` float raster."""
    ext = Path(path).suffix.lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".raw":
        return read_raw(path)
    raise FormatVersionError(f"unsupported image extension {ext!r} (use .pgm or .raw)")


def save_image(path: str | Path, img: IntensityImage) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".pgm":
        write_pgm(path, img)
    elif ext == ".raw":
        write_raw(path, img)
    else:
        raise FormatVersionError(f"unsupported image extension {ext!r} (use .pgm or .raw)")

