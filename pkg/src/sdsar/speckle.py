"""Multiplicative gamma speckle model and its additive reformulation.

A speckled intensity image is the element-wise product of the underlying
scene with an i.i.d. unit-mean gamma field whose variance is the reciprocal
of the number of looks. The same corruption can be rewritten additively as
the scene plus a zero-mean residual, which is what makes training on pairs
of speckled observations of the same scene possible. ``sdc_check`` verifies
the pairing condition (equal global means) between two candidate images.

Strong scatterers follow a Rician-family law rather than a gamma law, but
their speckle gain keeps unit mean, which is the only property the additive
reformulation relies on; this module therefore samples the gamma model only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .image import IntensityImage

__all__ = [
    "SpeckleField",
    "SdcReport",
    "sample_speckle",
    "apply_speckle",
    "additive_residual",
    "sdc_check",
]

# denominator guard for sdc_check on all-black images
EPS_MEAN = 1e-12


@dataclass(frozen=True)
class SpeckleField:
    """An i.i.d. gamma gain field: unit mean, variance 1/looks."""

    samples: np.ndarray
    looks: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.size == 0:
            raise ValueError(f"samples must be a non-empty 2-D raster, got shape {s.shape}")
        if s.min() <= 0 or not np.isfinite(s).all():
            raise ValueError("speckle samples must be finite and > 0")
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class SdcReport:
    """Result of checking that two images share the same global mean."""

    mean_a: float
    mean_b: float
    relative_gap: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "relative_gap": self.relative_gap,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


def sample_speckle(width: int, height: int, looks: int, seed: int) -> SpeckleField:
    """Draw an i.i.d. Gamma(looks, 1/looks) field, deterministic per seed.

    numpy's generator implements Marsaglia-Tsang rejection for shape >= 1,
    so the draw is exact for every integer number of looks.
    """
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if width < 1 or height < 1:
        raise ValueError(f"dimensions must be positive, got {width}x{height}")
    rng = np.random.default_rng(seed)
    samples = rng.gamma(shape=float(looks), scale=1.0 / looks, size=(height, width))
    return SpeckleField(samples=samples, looks=int(looks))


def apply_speckle(clean: IntensityImage, looks: int, seed: int) -> IntensityImage:
    """Multiply a clean image by a fresh speckle field."""
    field = sample_speckle(clean.width, clean.height, looks, seed)
    return IntensityImage(clean.pixels * field.samples, looks=int(looks))


def additive_residual(speckled: IntensityImage, clean: IntensityImage) -> np.ndarray:
    """Pixel-wise residual of the additive noise model: speckled - clean.

    The residual is zero-mean in expectation and may be negative, so a bare
    array is returned instead of an IntensityImage.
    """
    if speckled.shape != clean.shape:
        raise ValueError(f"shape mismatch: {speckled.shape} vs {clean.shape}")
    return speckled.pixels - clean.pixels


def sdc_check(a: IntensityImage, b: IntensityImage, tolerance: float) -> SdcReport:
    """Check that two images plausibly share the same underlying ground truth.

    Compares global means; shapes may differ. The relative gap is
    ``|mean(a) - mean(b)| / max(mean(a), mean(b), eps)``.
    """
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    mean_a = a.mean()
    mean_b = b.mean()
    denom = max(mean_a, mean_b)
    if denom < EPS_MEAN:
        raise DegenerateInputError(
            f"both means ({mean_a:.3e}, {mean_b:.3e}) are below {EPS_MEAN}; "
            "cannot form a relative gap"
        )
    gap = abs(mean_a - mean_b) / max(denom, EPS_MEAN)
    return SdcReport(
        mean_a=mean_a,
        mean_b=mean_b,
        relative_gap=gap,
        tolerance=tolerance,
        passed=gap <= tolerance,
    )
