"""Self-supervised SAR despeckling toolkit.

Training pairs are carved out of single speckled intensity images by a
randomized sub-sampler, a small reference network is trained with a
multi-feature loss (cycle despeckling, up-sampling regularization,
perceptual), and results are judged with no-reference speckle metrics.
"""

from .image import IntensityImage, load_image, save_image
from .speckle import SdcReport, SpeckleField, additive_residual, apply_speckle, sample_speckle, sdc_check
from .sampler import (
    DecorrelatorSpec,
    SubImageStack,
    decorrelate,
    global_upsample,
    ordered_sample,
    pair_independence_probe,
    ra_sample,
)
from .pcorr import PCSample, PCStatistic, angle, independence_test, projection_correlation
from .metrics import MetricsReport, Region, enl, epd_roa, mor, psnr, ssim, tcr
from .loss import FeatureExtractor, LossBreakdown, LossWeights, total_loss
from .model import DespecklerParams, NetworkSpec, TrainConfig, despeckle, forward, load_params, save_params, train

__version__ = "0.1.0"
