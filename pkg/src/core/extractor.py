import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision import models

from config import CONSTANTS
from src.core.errors import ExtractorError, ShapeError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
BACKBONE_SIZE = 256
STUB_GRID = 8


@dataclass
class FeatureMap:
    """Batched token grid: ``tokens`` is B×m×d_f, row-major over ``grid``."""
    tokens: torch.Tensor
    grid: Tuple[int, int]
    backbone: str

    def __post_init__(self):
        if self.tokens.dim() != 3:
            raise ShapeError(f"tokens must be B×m×d_f, got {tuple(self.tokens.shape)}")
        height, width = self.grid
        if height * width != self.tokens.shape[1] or self.tokens.shape[2] < 1:
            raise ShapeError(f"grid {self.grid} does not match tokens {tuple(self.tokens.shape)}")
        if not torch.isfinite(self.tokens).all():
            raise ExtractorError(f"{self.backbone} produced non-finite tokens")

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def num_tokens(self):
        return self.tokens.shape[1]

    @property
    def feature_dim(self):
        return self.tokens.shape[2]

    def to_grid(self):
        batch, _, channels = self.tokens.shape
        return self.tokens.transpose(1, 2).reshape(batch, channels, *self.grid)

    @classmethod
    def from_grid(cls, grid, backbone):
        batch, channels, height, width = grid.shape
        tokens = grid.reshape(batch, channels, height * width).transpose(1, 2).contiguous()
        return cls(tokens, (height, width), backbone)


@dataclass(frozen=True)
class ExtractorSpec:
    backbone: str = 'identity-stub'
    weights: str = ''
    weights_dir: str = ''
    feature_dim: int = 64
    frozen: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in CONSTANTS['BACKBONES']:
            raise ExtractorError(f"unknown backbone {self.backbone!r}")
        if not self.frozen:
            raise ExtractorError("extractor finetuning is not supported; frozen must be true")

    @classmethod
    def from_config(cls, config):
        return cls(
            backbone=config['backbone'],
            weights=config.get('weights', ''),
            weights_dir=config.get('weights_dir', ''),
            feature_dim=int(config.get('feature_dim', 64)),
            frozen=bool(config.get('frozen', True)) and not config.get('finetune', False),
            seed=int(config.get('seed', 0)),
        )

    @property
    def enabled(self):
        return self.backbone != 'none'


def weights_root(weights_dir=''):
    root = weights_dir or os.environ.get(CONSTANTS['WEIGHTS_ENV'], '')
    return Path(root) if root else Path.home() / '.cache' / 'pix2next'


def resolve_weights(spec):
    if spec.weights:
        path = Path(spec.weights)
        if not path.is_absolute():
            path = weights_root(spec.weights_dir) / path
    else:
        path = weights_root(spec.weights_dir) / CONSTANTS['BACKBONE_WEIGHTS'][spec.backbone]
    if not path.exists():
        raise ExtractorError(
            f"missing weights for {spec.backbone}: {path} (run `pix2next fetch-weights`)"
        )
    return path


class FeatureExtractor(nn.Module):
    backbone_id = 'base'
    enabled = True

    def check_input(self, rgb):
        if rgb.dim() != 4 or rgb.shape[1] != 3:
            raise ShapeError(f"expected B×3×H×W rgb batch, got {tuple(rgb.shape)}")
        if rgb.shape[-2:] != (BACKBONE_SIZE, BACKBONE_SIZE):
            raise ShapeError(
                f"{self.backbone_id} expects {BACKBONE_SIZE}×{BACKBONE_SIZE} input, got {tuple(rgb.shape[-2:])}"
            )

    def features(self, rgb):
        raise NotImplementedError

    @torch.no_grad()
    def forward(self, rgb):
        self.check_input(rgb)
        return FeatureMap.from_grid(self.features(rgb), self.backbone_id)


class IdentityStubExtractor(FeatureExtractor):
    backbone_id = 'identity-stub'

    def __init__(self, feature_dim=64, seed=0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.register_buffer('weight', torch.randn(3, feature_dim, generator=generator) / 3 ** 0.5)
        self.register_buffer('bias', 0.1 * torch.randn(feature_dim, generator=generator))

    def check_input(self, rgb):
        if rgb.dim() != 4 or rgb.shape[1] != 3:
            raise ShapeError(f"expected B×3×H×W rgb batch, got {tuple(rgb.shape)}")
        if any(side % STUB_GRID for side in rgb.shape[-2:]):
            raise ShapeError(f"identity-stub needs sides divisible by {STUB_GRID}, got {tuple(rgb.shape[-2:])}")

    def features(self, rgb):
        cells = F.adaptive_avg_pool2d(rgb, STUB_GRID)
        projected = torch.einsum('bchw,cd->bdhw', cells, self.weight.to(rgb.dtype))
        return projected + self.bias.to(rgb.dtype)[None, :, None, None]


class TorchvisionExtractor(FeatureExtractor):
    def __init__(self, backbone, weights_path):
        super().__init__()
        self.backbone_id = backbone
        builders = {
            'resnet': models.resnet50,
            'vit': models.vit_b_16,
            'swinv2': models.swin_v2_t,
        }
        self.model = builders[backbone](weights=None)
        try:
            state = torch.load(weights_path, map_location='cpu', weights_only=True)
            self.model.load_state_dict(state)
        except (RuntimeError, OSError, ValueError) as exc:
            raise ExtractorError(f"corrupt weights for {backbone} at {weights_path}: {exc}") from exc
        self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def features(self, rgb):
        x = (rgb - self.mean) / self.std
        if self.backbone_id == 'resnet':
            m = self.model
            x = m.maxpool(m.relu(m.bn1(m.conv1(x))))
            x = m.layer4(m.layer3(m.layer2(m.layer1(x))))
            return x
        if self.backbone_id == 'vit':
            # 位置编码按 224 训练
            x = F.interpolate(x, size=(224, 224), mode='bilinear', align_corners=False, antialias=True)
            m = self.model
            tokens = m._process_input(x)
            cls_token = m.class_token.expand(tokens.shape[0], -1, -1)
            tokens = m.encoder(torch.cat([cls_token, tokens], dim=1))[:, 1:]
            side = int(tokens.shape[1] ** 0.5)
            return tokens.transpose(1, 2).reshape(tokens.shape[0], -1, side, side)
        x = self.model.norm(self.model.features(x))
        return x.permute(0, 3, 1, 2)


class TorchScriptExtractor(FeatureExtractor):
    def __init__(self, backbone, weights_path):
        super().__init__()
        self.backbone_id = backbone
        try:
            self.model = torch.jit.load(str(weights_path), map_location='cpu')
        except (RuntimeError, OSError, ValueError) as exc:
            raise ExtractorError(f"corrupt TorchScript module for {backbone} at {weights_path}: {exc}") from exc
        self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def features(self, rgb):
        grid = self.model((rgb - self.mean) / self.std)
        if isinstance(grid, (list, tuple)):
            grid = grid[-1]
        if grid.dim() != 4:
            raise ExtractorError(f"{self.backbone_id} returned shape {tuple(grid.shape)}, expected B×C×h×w")
        return grid


class NullExtractor(nn.Module):
    """Disabled extractor: the generator's attention sites pass through."""
    backbone_id = 'none'
    enabled = False

    def forward(self, rgb):
        return None


def build_extractor(spec: ExtractorSpec):
    if spec.backbone == 'none':
        return disable()
    if spec.backbone == 'identity-stub':
        extractor = IdentityStubExtractor(spec.feature_dim, spec.seed)
    elif spec.backbone == 'internimage':
        extractor = TorchScriptExtractor(spec.backbone, resolve_weights(spec))
    else:
        extractor = TorchvisionExtractor(spec.backbone, resolve_weights(spec))

    for param in extractor.parameters():
        param.requires_grad = False
    extractor.eval()
    logger.info("extractor %s ready (frozen)", spec.backbone)
    return extractor


def probe_feature_dim(extractor, device='cpu'):
    if not extractor.enabled:
        return None
    size = BACKBONE_SIZE
    features = extractor(torch.zeros(1, 3, size, size, device=device))
    return features.feature_dim, features.num_tokens


def extract(spec_or_extractor, rgb) -> Optional[FeatureMap]:
    extractor = spec_or_extractor
    if isinstance(spec_or_extractor, ExtractorSpec):
        extractor = build_extractor(spec_or_extractor)
    return extractor(rgb)


def disable():
    return NullExtractor()
