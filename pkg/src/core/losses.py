import math
from dataclasses import dataclass
from typing import Dict, List

import torch
import torch.nn.functional as F
from torchmetrics.functional.image import structural_similarity_index_measure

from config import CONSTANTS
from src.core.errors import NumericalError, ShapeError

LOGIT_CLAMP = 50.0


@dataclass(frozen=True)
class LossWeights:
    lambda_fm: float = 10.0
    lambda_ssim: float = 10.0

    def __post_init__(self):
        if self.lambda_fm < 0 or self.lambda_ssim < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def from_config(cls, config):
        return cls(float(config['lambda_fm']), float(config['lambda_ssim']))


@dataclass(frozen=True)
class SSIMParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self):
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.data_range) ** 2


def gan_loss(real_scores, fake_scores, role='discriminator', mode='bce'):
    """Patch-averaged adversarial loss.

    Discriminator: mean of the real and fake terms. Generator: the
    non-saturating term on fake scores (``real_scores`` may be None).
    """
    if mode not in CONSTANTS['GAN_MODES']:
        raise ValueError(f"unknown gan mode {mode!r}")
    fake = fake_scores.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    if role == 'generator':
        if mode == 'lsgan':
            return ((fake - 1.0) ** 2).mean()
        return F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))
    if role != 'discriminator':
        raise ValueError(f"unknown role {role!r}")

    real = real_scores.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    if mode == 'lsgan':
        return 0.5 * (((real - 1.0) ** 2).mean() + (fake ** 2).mean())
    real_term = F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
    fake_term = F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake))
    return 0.5 * (real_term + fake_term)


def ssim_map(x, y, params: SSIMParams = SSIMParams()):
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"ssim expects B×1×H×W, got {tuple(x.shape)}")
    if params.window % 2 == 0:
        raise ShapeError(f"ssim window must be odd, got {params.window}")
    if min(x.shape[-2:]) < params.window:
        raise ShapeError(f"ssim window {params.window} larger than image {tuple(x.shape[-2:])}")

    _, full = structural_similarity_index_measure(
        x, y, gaussian_kernel=True, sigma=params.sigma, kernel_size=params.window,
        data_range=params.data_range, k1=params.k1, k2=params.k2, return_full_image=True,
    )
    # 去掉反射填充得到的边缘，只保留窗口完整落在图内的位置
    per_pixel = full
    if full.shape[-2:] == x.shape[-2:]:
        pad = (params.window - 1) // 2
        per_pixel = full[..., pad:full.shape[-2] - pad, pad:full.shape[-1] - pad]
    return per_pixel, per_pixel.mean()


def ssim_loss(target, generated, params: SSIMParams = SSIMParams()):
    _, mean = ssim_map(target, generated, params)
    return 1.0 - mean


def feature_matching_loss(real_features: List[List[torch.Tensor]],
                          fake_features: List[List[torch.Tensor]]):
    """Σ_k Σ_i mean|D_k^(i)(real) − D_k^(i)(fake)|; real taps are constants."""
    if len(real_features) != len(fake_features):
        raise ShapeError(f"{len(real_features)} real vs {len(fake_features)} fake discriminators")
    total = None
    for real_taps, fake_taps in zip(real_features, fake_features):
        if len(real_taps) != len(fake_taps):
            raise ShapeError(f"{len(real_taps)} real vs {len(fake_taps)} fake feature layers")
        for real, fake in zip(real_taps, fake_taps):
            if real.shape != fake.shape:
                raise ShapeError(f"feature shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
            term = (real.detach() - fake).abs().mean()
            total = term if total is None else total + term
    if total is None:
        raise ShapeError("feature matching needs at least one feature layer")
    return total


def total_generator_loss(gan_terms, fm_term, ssim_term, weights: LossWeights = LossWeights()):
    gan_total = sum(gan_terms) if isinstance(gan_terms, (list, tuple)) else gan_terms
    components = {'L_GAN': gan_total, 'L_FM': fm_term, 'L_SSIM': ssim_term}
    for name, value in components.items():
        if not math.isfinite(float(value)):
            raise NumericalError(f"non-finite loss component {name}")
    total = gan_total + weights.lambda_fm * fm_term + weights.lambda_ssim * ssim_term
    breakdown: Dict[str, float] = {name: float(value) for name, value in components.items()}
    breakdown['L_total'] = float(total)
    return total, breakdown
