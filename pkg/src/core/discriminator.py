import logging
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from config import CONSTANTS
from src.core.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscriminatorSpec:
    scales: int = 3
    n_layers: int = 4
    base_width: int = 64
    max_width: int = 512
    negative_slope: float = 0.2
    conditioning: str = 'unconditional'
    target_channels: int = 1
    first_layer_norm: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        if self.scales != 3:
            raise ShapeError(f"exactly 3 discriminator scales are supported, got {self.scales}")
        if self.conditioning not in CONSTANTS['CONDITIONING']:
            raise ShapeError(f"unknown conditioning {self.conditioning!r}")

    @property
    def in_channels(self):
        extra = 3 if self.conditioning == 'rgb-concat' else 0
        return self.target_channels + extra

    @property
    def widths(self):
        return [min(self.base_width * 2 ** i, self.max_width) for i in range(self.n_layers)]

    @classmethod
    def from_config(cls, config, target_channels=1):
        return cls(
            scales=int(config['scales']),
            n_layers=int(config['n_layers']),
            base_width=int(config['base_width']),
            max_width=int(config['max_width']),
            negative_slope=float(config['negative_slope']),
            conditioning=config['conditioning'],
            target_channels=target_channels,
            first_layer_norm=bool(config['first_layer_norm']),
        )

    def to_dict(self):
        return asdict(self)


class PatchNorm(nn.Module):
    """Instance norm; a 1×1 map has no spatial statistics and passes through."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels)

    def forward(self, x):
        if x.shape[-2] * x.shape[-1] == 1:
            return x
        return self.norm(x)


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec, scale_factor=1):
        super().__init__()
        self.spec = spec
        self.scale_factor = scale_factor
        layers = []
        in_channels = spec.in_channels
        for index, width in enumerate(spec.widths):
            block = [nn.Conv2d(in_channels, width, 4, stride=2, padding=1)]
            if index > 0 or spec.first_layer_norm:
                block.append(PatchNorm(width))
            block.append(nn.LeakyReLU(spec.negative_slope))
            layers.append(nn.Sequential(*block))
            in_channels = width
        self.layers = nn.ModuleList(layers)
        self.head = nn.Conv2d(in_channels, 1, 3, stride=1, padding=1)

    def forward(self, image, condition=None):
        x = image if condition is None else torch.cat([image, condition], dim=1)
        features = []
        for layer in self.layers:
            x = layer(x)
            features.append(x)
        scores = self.head(x)
        features.append(scores)
        return scores, features


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.discriminators = nn.ModuleList(
            PatchDiscriminator(spec, scale_factor=2 ** k) for k in range(spec.scales)
        )

    def __getitem__(self, index):
        return self.discriminators[index]

    def __len__(self):
        return len(self.discriminators)

    def __iter__(self):
        return iter(self.discriminators)

    def forward(self, pyramid, conditions=None):
        conditions = conditions or [None] * len(pyramid)
        return [
            score(disc, image, condition)
            for disc, image, condition in zip(self.discriminators, pyramid, conditions)
        ]


def patch_map_size(size, n_layers=4):
    for _ in range(n_layers):
        size = (size + 2 - 4) // 2 + 1
    return size


def multiscale_pyramid(images, levels=3):
    factor = 2 ** (levels - 1)
    if any(side % factor for side in images.shape[-2:]):
        raise ShapeError(f"image sides {tuple(images.shape[-2:])} must be divisible by {factor}")
    pyramid = [images]
    for _ in range(levels - 1):
        pyramid.append(F.avg_pool2d(pyramid[-1], kernel_size=2, stride=2))
    return pyramid


def build_discriminators(spec: DiscriminatorSpec, seed=0):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MultiScaleDiscriminator(spec)
        for layer in model.modules():
            if isinstance(layer, nn.Conv2d):
                nn.init.normal_(layer.weight, 0.0, spec.init_std)
                nn.init.zeros_(layer.bias)
    logger.info(
        "discriminators built: 3 × %d parameters (%s)",
        sum(p.numel() for p in model[0].parameters()), spec.conditioning,
    )
    return model


def score(discriminator, image, condition=None, full_size=None):
    spec = discriminator.spec
    if condition is not None and spec.conditioning == 'unconditional':
        raise ShapeError("condition supplied to an unconditional discriminator")
    if condition is None and spec.conditioning == 'rgb-concat':
        raise ShapeError("rgb-concat discriminator needs the rgb condition")
    if image.shape[1] != spec.target_channels:
        raise ShapeError(f"expected {spec.target_channels}-channel images, got {image.shape[1]}")
    if full_size is not None:
        expected = tuple(side // discriminator.scale_factor for side in full_size)
        if tuple(image.shape[-2:]) != expected:
            raise ShapeError(
                f"discriminator at 1/{discriminator.scale_factor} scale expects {expected}, "
                f"got {tuple(image.shape[-2:])}"
            )
    if condition is not None and condition.shape[-2:] != image.shape[-2:]:
        raise ShapeError("condition and image sizes differ")
    return discriminator(image, condition)
