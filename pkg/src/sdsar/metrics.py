"""Despeckling quality metrics.

ENL, TCR, MoR and EPD-ROA are no-reference metrics computed between a
speckled original and its despeckled counterpart (or on a single image for
ENL); PSNR and SSIM require a clean ground truth and are meaningful only on
synthetic data.

Region selection is the caller's job: homogeneous regions are passed as
explicit rectangles, never auto-detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DegenerateRegionError
from .image import IntensityImage

__all__ = [
    "Region",
    "MetricsReport",
    "enl",
    "tcr",
    "mor",
    "epd_roa",
    "psnr",
    "ssim",
    "psnr_ssim",
]

# floor for pixel-ratio denominators (dark-scene robustness)
EPS_RATIO = 1e-12


@dataclass(frozen=True)
class Region:
    """A rectangle (row, col, height, width) into an image."""

    row: int
    col: int
    height: int
    width: int

    def __post_init__(self):
        if self.row < 0 or self.col < 0 or self.height < 1 or self.width < 1:
            raise ValueError(f"invalid region {self}")
        if self.height * self.width < 2:
            raise ValueError(f"region must cover at least 2 pixels, got {self}")

    def extract(self, img: IntensityImage | np.ndarray) -> np.ndarray:
        px = img.pixels if isinstance(img, IntensityImage) else np.asarray(img, dtype=np.float64)
        h, w = px.shape
        if self.row + self.height > h or self.col + self.width > w:
            raise ValueError(f"region {self} out of bounds for {h}x{w} image")
        return px[self.row : self.row + self.height, self.col : self.col + self.width]

    def to_dict(self) -> dict:
        return {"row": self.row, "col": self.col, "height": self.height, "width": self.width}


@dataclass(frozen=True)
class MetricsReport:
    enl: float | None
    tcr: float | None
    mor: float | None
    epd_roa_h: float | None
    epd_roa_v: float | None
    psnr: float | None = None
    ssim: float | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        d = {
            "enl": enc(self.enl),
            "tcr": enc(self.tcr),
            "mor": enc(self.mor),
            "epd_roa_h": enc(self.epd_roa_h),
            "epd_roa_v": enc(self.epd_roa_v),
            "psnr": enc(self.psnr),
            "ssim": enc(self.ssim),
        }
        if self.epd_roa_h is not None and self.epd_roa_v is not None:
            d["epd_roa_mean"] = 0.5 * (self.epd_roa_h + self.epd_roa_v)
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def _pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, IntensityImage) else np.asarray(img, dtype=np.float64)
    if px.ndim != 2:
        raise ValueError(f"expected a 2-D raster, got shape {px.shape}")
    return px


def enl(img, region: Region | None = None) -> float:
    """Equivalent number of looks: mean^2 / population variance of a region.

    On an i.i.d. gamma-L field this converges to L; higher means smoother.
    """
    px = region.extract(img) if region is not None else _pixels(img)
    if px.size < 2:
        raise DegenerateRegionError("ENL region needs at least 2 pixels")
    mu = px.mean()
    var = px.var()
    if var <= 0.0:
        raise DegenerateRegionError("ENL undefined on a constant region")
    return float(mu * mu / var)


def tcr(despeckled_patch, speckled_patch) -> float:
    """Target-to-clutter ratio change, in dB; 0 means scatterers preserved.

    |20 log10(max/mean of despeckled) - 20 log10(max/mean of speckled)|;
    the max/mean ratio is scale invariant, so TCR(X, c*X) = 0.
    """
    d = _pixels(despeckled_patch)
    s = _pixels(speckled_patch)
    for name, px in (("despeckled", d), ("speckled", s)):
        if px.max() <= 0.0 or px.mean() <= 0.0:
            raise DegenerateRegionError(f"TCR undefined: {name} patch has zero max or mean")
    return float(
        abs(20.0 * np.log10(d.max() / d.mean()) - 20.0 * np.log10(s.max() / s.mean()))
    )


def mor(speckled, despeckled) -> float:
    """Mean of the pixel-wise ratio speckled / despeckled; 1 preserves radiometry."""
    s = _pixels(speckled)
    d = _pixels(despeckled)
    if s.shape != d.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {d.shape}")
    if d.max() <= 0.0:
        raise DegenerateRegionError("MoR undefined: despeckled image is all zero")
    return float(np.mean(s / np.maximum(d, EPS_RATIO)))


def epd_roa(despeckled, original, direction: str = "horizontal") -> float:
    """Edge-preservation degree from ratios of adjacent pixels.

    Sums |a/b| over adjacent pixel pairs along the chosen direction in both
    images and returns despeckled-sum / original-sum; 1 means edges kept.
    """
    d = _pixels(despeckled)
    o = _pixels(original)
    if d.shape != o.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {o.shape}")
    if direction == "horizontal":
        da, db = d[:, :-1], d[:, 1:]
        oa, ob = o[:, :-1], o[:, 1:]
    elif direction == "vertical":
        da, db = d[:-1, :], d[1:, :]
        oa, ob = o[:-1, :], o[1:, :]
    else:
        raise ValueError(f"direction must be 'horizontal' or 'vertical', got {direction!r}")
    num = np.abs(da / np.maximum(db, EPS_RATIO)).sum()
    den = np.abs(oa / np.maximum(ob, EPS_RATIO)).sum()
    if den <= EPS_RATIO:
        raise DegenerateRegionError("EPD-ROA undefined: original ratio sum is zero")
    return float(num / den)


def psnr(despeckled, clean, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images.

    ``data_range`` defaults to the clean image's max-min span.
    """
    d = _pixels(despeckled)
    c = _pixels(clean)
    if d.shape != c.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {c.shape}")
    mse = float(np.mean((d - c) ** 2))
    if mse == 0.0:
        return math.inf
    if data_range is None:
        data_range = float(np.ptp(c))
    if data_range <= 0:
        raise DegenerateRegionError("PSNR undefined: zero data range")
    return float(10.0 * np.log10(data_range**2 / mse))


def ssim(a, b, data_range: float | None = None, window: int = 8) -> float:
    """Structural similarity with uniform square windows, standard constants."""
    x = _pixels(a)
    y = _pixels(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    if data_range is None:
        combined = max(np.ptp(x), np.ptp(y))
        data_range = float(combined) if combined > 0 else 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def win(img):
        return uniform_filter(img, size=window, mode="reflect")

    mx = win(x)
    my = win(y)
    vx = win(x * x) - mx * mx
    vy = win(y * y) - my * my
    cxy = win(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    # trim the border so every window lies fully inside the image
    half = window // 2
    ssim_map = (num / den)[half:-half or None, half:-half or None]
    return float(ssim_map.mean())


def psnr_ssim(despeckled, clean, data_range: float | None = None) -> tuple[float, float]:
    """Convenience pair for the synthetic-data track."""
    return psnr(despeckled, clean, data_range), ssim(despeckled, clean, data_range)
