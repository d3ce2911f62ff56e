"""Encoder–bottleneck–decoder generator with cross-attention feature injection.

Block schedule (widths shown for ``base_channels=128``)::

    encoder     B1 res[128,128] res[128,256] res[256,256]   B2 down[256]
                B3 res[256,256] res[256,512] res[512,512]   B4 down[512]
                B5 res[512,512]×3                           B6 down[512]
                B7 res[512,512] attn[128,4]
    bottleneck  B1 res×3   B2 res attn res   B3 res×3
    decoder     B1 res attn res   B2 up[512]
                B3 res[512,512] res[512,256] res[256,256]   B4 up[256]
                B5 res[256,256]×3                           B6 up[256]
                B7 res[256,128] res[128,128]

With ``attention='B-only'`` only the bottleneck site is built; ``variant='residual'``
builds no attention sites and ignores extractor features. Skips are
additive: a decoder block input is summed with the deepest encoder output
of identical resolution and width, each encoder output used at most once.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Tuple

import torch
import torch.nn as nn

from config import CONSTANTS
from src.core.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = {
    'silu': nn.SiLU,
    'relu': nn.ReLU,
    'gelu': nn.GELU,
}


@dataclass(frozen=True)
class GeneratorSpec:
    base_channels: int = 128
    in_channels: int = 3
    out_channels: int = 1
    attention: str = 'EBD'
    variant: str = 'attention'
    attention_hidden: int = 128
    attention_heads: int = 4
    norm_groups: int = 32
    feature_dim: int = 64
    activation: str = 'silu'
    init_std: float = 0.02

    def __post_init__(self):
        if self.attention not in CONSTANTS['ATTENTION_PLACEMENTS']:
            raise ShapeError(f"unknown attention placement {self.attention!r}")
        if self.variant not in CONSTANTS['GENERATOR_VARIANTS']:
            raise ShapeError(f"unknown generator variant {self.variant!r}")
        if self.attention_hidden % self.attention_heads:
            raise ShapeError(
                f"attention hidden {self.attention_hidden} not divisible by {self.attention_heads} heads"
            )
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        for width in self.widths:
            if width % self.norm_groups:
                raise ShapeError(f"width {width} not divisible by {self.norm_groups} norm groups")

    @property
    def widths(self):
        return self.base_channels, 2 * self.base_channels, 4 * self.base_channels

    @property
    def uses_features(self):
        return self.variant == 'attention'

    @classmethod
    def from_config(cls, config, attention='EBD', feature_dim=64):
        return cls(
            base_channels=int(config['base_channels']),
            in_channels=int(config['in_channels']),
            out_channels=int(config['out_channels']),
            attention=attention,
            variant=config.get('variant', 'attention'),
            attention_hidden=int(config['attention_hidden']),
            attention_heads=int(config['attention_heads']),
            norm_groups=int(config['norm_groups']),
            feature_dim=int(feature_dim),
            activation=config['activation'],
            init_std=float(config['init_std']),
        )

    def to_dict(self):
        return asdict(self)

    def schedule(self):
        """Per-stage block lists; each layer is ('res', in, out), ('down', c), ('up', c) or ('attn',)."""
        c1, c2, c3 = self.widths
        attn = [('attn',)] if self.uses_features else []
        ebd = attn if self.attention == 'EBD' else []
        res3 = [('res', c3, c3)] * 3
        encoder = [
            [('res', c1, c1), ('res', c1, c2), ('res', c2, c2)],
            [('down', c2)],
            [('res', c2, c2), ('res', c2, c3), ('res', c3, c3)],
            [('down', c3)],
            list(res3),
            [('down', c3)],
            [('res', c3, c3)] + ebd,
        ]
        bottleneck = [
            list(res3),
            [('res', c3, c3)] + attn + [('res', c3, c3)],
            list(res3),
        ]
        decoder = [
            [('res', c3, c3)] + ebd + [('res', c3, c3)],
            [('up', c3)],
            [('res', c3, c3), ('res', c3, c2), ('res', c2, c2)],
            [('up', c2)],
            [('res', c2, c2)] * 3,
            [('up', c2)],
            [('res', c2, c1), ('res', c1, c1)],
        ]
        return {'encoder': encoder, 'bottleneck': bottleneck, 'decoder': decoder}


class ResidualBlock(nn.Module):
    def __init__(self, in_channels, out_channels, groups=32, activation='silu'):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.act = ACTIVATIONS[activation]()
        if in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return self.shortcut(x) + h


class Downsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode='nearest')
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(self.up(x))


class CrossAttentionSite(nn.Module):
    """Queries from the feature grid, keys/values from extractor tokens.

    softmax(Q Kᵀ / √d_k) V per head, projected back to the grid width and
    added to the input grid.
    """

    def __init__(self, channels, feature_dim, hidden=128, heads=4, groups=32):
        super().__init__()
        self.channels = channels
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, hidden)
        self.to_k = nn.Linear(feature_dim, hidden)
        self.to_v = nn.Linear(feature_dim, hidden)
        self.to_out = nn.Linear(hidden, channels)

    def _split_heads(self, x):
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

    def _check(self, x, features):
        if x.shape[1] != self.channels:
            raise ShapeError(f"attention site expects {self.channels} channels, got {x.shape[1]}")
        if features.feature_dim != self.feature_dim:
            raise ShapeError(f"attention site expects d_f={self.feature_dim}, got {features.feature_dim}")
        if len(features) != x.shape[0]:
            raise ShapeError(f"feature batch {len(features)} does not match image batch {x.shape[0]}")
        if not torch.isfinite(x).all() or not torch.isfinite(features.tokens).all():
            raise NumericalError("non-finite input to cross-attention")

    def query_tokens(self, x):
        return self.norm(x).flatten(2).transpose(1, 2)

    def attention_weights(self, x, features):
        """B×heads×n×m softmax weights; rows sum to one."""
        self._check(x, features)
        q = self._split_heads(self.to_q(self.query_tokens(x)))
        k = self._split_heads(self.to_k(features.tokens.to(x.dtype)))
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        return logits.softmax(dim=-1)

    def forward(self, x, features=None):
        if features is None:
            return x
        batch, channels, height, width = x.shape
        weights = self.attention_weights(x, features)
        v = self._split_heads(self.to_v(features.tokens.to(x.dtype)))
        attended = (weights @ v).transpose(1, 2).reshape(batch, height * width, self.hidden)
        out = self.to_out(attended).transpose(1, 2).reshape(batch, channels, height, width)
        return x + out


def cross_attend(site, query_grid, features):
    return site(query_grid, features)


class GeneratorBlock(nn.Module):
    def __init__(self, layers: List[Tuple], spec: GeneratorSpec):
        super().__init__()
        self.kinds = [layer[0] for layer in layers]
        modules = []
        width = None
        for layer in layers:
            kind = layer[0]
            if kind == 'res':
                modules.append(ResidualBlock(layer[1], layer[2], spec.norm_groups, spec.activation))
                width = layer[2]
            elif kind == 'down':
                modules.append(Downsample(layer[1]))
                width = layer[1]
            elif kind == 'up':
                modules.append(Upsample(layer[1]))
                width = layer[1]
            else:
                modules.append(CrossAttentionSite(
                    width, spec.feature_dim, spec.attention_hidden,
                    spec.attention_heads, spec.norm_groups,
                ))
        self.layers = nn.ModuleList(modules)

    def forward(self, x, features=None):
        for layer in self.layers:
            if isinstance(layer, CrossAttentionSite):
                x = layer(x, features)
            else:
                x = layer(x)
        return x


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec, use_features=True):
        super().__init__()
        self.spec = spec
        self.use_features = use_features and spec.uses_features
        c1 = spec.widths[0]
        schedule = spec.schedule()
        self.stem = nn.Conv2d(spec.in_channels, c1, 3, padding=1)
        self.encoder = nn.ModuleList(GeneratorBlock(block, spec) for block in schedule['encoder'])
        self.bottleneck = nn.ModuleList(GeneratorBlock(block, spec) for block in schedule['bottleneck'])
        self.decoder = nn.ModuleList(GeneratorBlock(block, spec) for block in schedule['decoder'])
        self.head = nn.Sequential(
            nn.GroupNorm(spec.norm_groups, c1),
            ACTIVATIONS[spec.activation](),
            nn.Conv2d(c1, spec.out_channels, 3, padding=1),
        )

    def attention_sites(self):
        sites = []
        for stage in ('encoder', 'bottleneck', 'decoder'):
            for index, block in enumerate(getattr(self, stage), start=1):
                for layer in block.layers:
                    if isinstance(layer, CrossAttentionSite):
                        sites.append((f"{stage}.B{index}", layer))
        return sites

    def forward(self, rgb, features=None):
        if rgb.dim() != 4 or rgb.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected B×{self.spec.in_channels}×H×W input, got {tuple(rgb.shape)}")
        if any(side % 8 for side in rgb.shape[-2:]):
            raise ShapeError(f"input sides must be divisible by 8, got {tuple(rgb.shape[-2:])}")
        if not self.use_features:
            features = None
        elif features is None:
            raise ShapeError("features are required unless the extractor is disabled")
        elif len(features) != rgb.shape[0]:
            raise ShapeError(f"feature batch {len(features)} does not match image batch {rgb.shape[0]}")

        h = self.stem(rgb)
        skips = {}
        for block in self.encoder:
            h = block(h, features)
            skips[(h.shape[1], h.shape[2], h.shape[3])] = h
        for block in self.bottleneck:
            h = block(h, features)
        for block in self.decoder:
            skip = skips.pop((h.shape[1], h.shape[2], h.shape[3]), None)
            if skip is not None:
                h = h + skip
            h = block(h, features)
        return (torch.tanh(self.head(h)) + 1.0) / 2.0


def init_weights(module, std=0.02):
    for layer in module.modules():
        if isinstance(layer, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(layer.weight, 0.0, std)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
        elif isinstance(layer, nn.GroupNorm):
            nn.init.ones_(layer.weight)
            nn.init.zeros_(layer.bias)


def count_parameters(module):
    return sum(param.numel() for param in module.parameters())


def build_generator(spec: GeneratorSpec, seed=0, use_features=True):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = Generator(spec, use_features=use_features)
        init_weights(generator, spec.init_std)
    logger.info(
        "generator built: %d parameters, %d attention sites (%s)",
        count_parameters(generator), len(generator.attention_sites()), spec.attention,
    )
    return generator


def forward(generator, rgb, features=None):
    return generator(rgb, features)
