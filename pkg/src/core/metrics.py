"""Evaluation battery: PSNR, SSIM, RMSE, pixel-wise STD, FID, LPIPS, DISTS.

Images enter in [0, 1]; RMSE and STD are reported on the 0–255 scale.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision import models
from tqdm import tqdm

from config import CONSTANTS
from src.core.data_processor import collapse_to_single_channel, resize_image
from src.core.errors import MetricError, ShapeError
from src.core.extractor import weights_root
from src.core.losses import SSIMParams, ssim_map
from src.utils.data_utils import list_images, load_image, shared_stems

logger = logging.getLogger(__name__)

PSNR_IDENTICAL = math.inf
EIGEN_TOLERANCE = 1e-8
FID_JITTER = 1e-6
DISTS_C1 = 1e-6
DISTS_C2 = 1e-6


def _as_pair(gen, gt):
    gen = np.asarray(gen, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if gen.shape != gt.shape:
        raise ShapeError(f"generated {gen.shape} and ground truth {gt.shape} differ")
    return gen, gt


def psnr(gen, gt):
    gen, gt = _as_pair(gen, gt)
    mse = float(np.mean((gen - gt) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def rmse(gen, gt):
    gen, gt = _as_pair(gen, gt)
    return 255.0 * math.sqrt(float(np.mean((gen - gt) ** 2)))


def pixel_std(gen, gt):
    # 0-255 尺度下误差图的总体标准差
    gen, gt = _as_pair(gen, gt)
    return 255.0 * float(np.std(gen - gt))


def _to_batch(image, dtype=torch.float64):
    tensor = image if torch.is_tensor(image) else torch.from_numpy(np.asarray(image))
    tensor = tensor.to(dtype)
    if tensor.dim() == 2:
        tensor = tensor[None, None]
    elif tensor.dim() == 3:
        tensor = tensor.permute(2, 0, 1)[None]
    return tensor


def ssim_metric(gen, gt, params: SSIMParams = SSIMParams()):
    gen, gt = _as_pair(gen, gt)
    _, mean = ssim_map(_to_batch(gen), _to_batch(gt), params)
    return float(mean)


def to_three_channels(images):
    if images.shape[1] == 3:
        return images
    if images.shape[1] != 1:
        raise ShapeError(f"cannot replicate {images.shape[1]} channels to 3")
    return images.repeat(1, 3, 1, 1)


def _sqrtm_psd(matrix):
    symmetric = (matrix + matrix.T) / 2.0
    values, vectors = scipy.linalg.eigh(symmetric)
    scale = max(1.0, float(np.max(np.abs(values))))
    if values.min() < -EIGEN_TOLERANCE * scale:
        raise np.linalg.LinAlgError(f"matrix not positive semi-definite (min eigenvalue {values.min():.3e})")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def _trace_sqrt_product(sigma1, sigma2):
    root = _sqrtm_psd(sigma1)
    product = root @ sigma2 @ root
    values = scipy.linalg.eigh((product + product.T) / 2.0, eigvals_only=True)
    scale = max(1.0, float(np.max(np.abs(values))))
    if values.min() < -EIGEN_TOLERANCE * scale:
        raise np.linalg.LinAlgError(f"product not positive semi-definite (min eigenvalue {values.min():.3e})")
    return float(np.sum(np.sqrt(np.clip(values, 0.0, None))))


def frechet_distance(mu1, sigma1, mu2, sigma2):
    """‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^½)."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    sigma2 = np.atleast_2d(np.asarray(sigma2, dtype=np.float64))
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise ShapeError("frechet distance inputs have mismatched dimensions")

    diff = mu1 - mu2
    for jitter in (0.0, FID_JITTER):
        offset = jitter * np.eye(sigma1.shape[0])
        try:
            tr_covmean = _trace_sqrt_product(sigma1 + offset, sigma2 + offset)
        except np.linalg.LinAlgError as exc:
            logger.warning("frechet distance: %s; retrying with %.0e jitter", exc, FID_JITTER)
            continue
        return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * tr_covmean)
    raise MetricError("covariance product is singular beyond jitter rescue")


def corpus_statistics(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise MetricError(f"FID needs at least 2 embeddings per corpus, got shape {features.shape}")
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def fid(gen_features, gt_features):
    mu1, sigma1 = corpus_statistics(gen_features)
    mu2, sigma2 = corpus_statistics(gt_features)
    return frechet_distance(mu1, sigma1, mu2, sigma2)


@dataclass(frozen=True)
class FeatureBackendSpec:
    kind: str = 'lightweight-stub'
    weights_path: str = ''
    embedding_dim: int = 112
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONSTANTS['METRIC_BACKENDS']:
            raise MetricError(f"unknown metric backend {self.kind!r}")


class StubBackend(nn.Module):
    name = 'lightweight-stub'

    def __init__(self, seed=0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.stages = nn.ModuleList([
                nn.Sequential(nn.Conv2d(3, 16, 3, padding=1), nn.ReLU()),
                nn.Sequential(nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU()),
                nn.Sequential(nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU()),
            ])
        for param in self.parameters():
            param.requires_grad = False
        self.eval()

    @property
    def embedding_dim(self):
        return 16 + 32 + 64

    @torch.no_grad()
    def layers(self, images):
        activations = []
        x = images.float()
        for stage in self.stages:
            x = stage(x)
            activations.append(x)
        return activations

    @torch.no_grad()
    def embed(self, images):
        return torch.cat([layer.mean(dim=(2, 3)) for layer in self.layers(images)], dim=1)


class InceptionBackend(nn.Module):
    name = 'inception-like'
    taps = ('Mixed_5d', 'Mixed_6e', 'Mixed_7c')

    def __init__(self, weights_path):
        super().__init__()
        self.model = models.inception_v3(weights=None, aux_logits=True, init_weights=False)
        state = torch.load(weights_path, map_location='cpu', weights_only=True)
        self.model.load_state_dict(state)
        self.model.eval()
        for param in self.parameters():
            param.requires_grad = False
        self.register_buffer('mean', torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    @property
    def embedding_dim(self):
        return 2048

    @torch.no_grad()
    def _run(self, images):
        x = F.interpolate(images.float(), size=(299, 299), mode='bilinear', align_corners=False)
        x = (x - self.mean) / self.std
        taps = {}
        for name, module in self.model.named_children():
            if name in ('AuxLogits', 'dropout', 'fc'):
                continue
            x = module(x)
            if name in self.taps:
                taps[name] = x
        return [taps[name] for name in self.taps], torch.flatten(x, 1)

    def layers(self, images):
        return self._run(images)[0]

    def embed(self, images):
        return self._run(images)[1]


def load_backend(kind, weights_dir=''):
    spec = FeatureBackendSpec(kind=kind or 'none')
    if spec.kind == 'none':
        return None
    if spec.kind == 'lightweight-stub':
        return StubBackend(spec.seed)
    path = Path(spec.weights_path) if spec.weights_path else (
        weights_root(weights_dir) / CONSTANTS['BACKBONE_WEIGHTS']['inception'])
    # 缺少权重时返回 None, 感知指标记为跳过
    if not path.exists():
        logger.warning("metric backend %s skipped: missing weights %s", spec.kind, path)
        return None
    return InceptionBackend(path)


def _backend_input(image):
    return to_three_channels(_to_batch(image, torch.float32))


def _unit_normalize(x, eps=1e-10):
    return x / (x.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)


def lpips(gen, gt, backend):
    """Mean over layers' spatial positions of channel-averaged squared
    distance between unit-normalized activations."""
    gen_layers = backend.layers(_backend_input(gen))
    gt_layers = backend.layers(_backend_input(gt))
    total = 0.0
    for a, b in zip(gen_layers, gt_layers):
        diff = (_unit_normalize(a.double()) - _unit_normalize(b.double())) ** 2
        total += float(diff.mean(dim=1).mean())
    return total


def dists(gen, gt, backend):
    """1 − weighted texture (mean) and structure (covariance) similarity over
    the input image and every backend layer."""
    gen_input = _backend_input(gen)
    gt_input = _backend_input(gt)
    gen_layers = [gen_input] + list(backend.layers(gen_input))
    gt_layers = [gt_input] + list(backend.layers(gt_input))
    total_channels = sum(layer.shape[1] for layer in gen_layers)
    weight = 1.0 / (2.0 * total_channels)

    score = 0.0
    for a, b in zip(gen_layers, gt_layers):
        a, b = a.double(), b.double()
        mu_a, mu_b = a.mean(dim=(2, 3)), b.mean(dim=(2, 3))
        var_a = ((a - mu_a[..., None, None]) ** 2).mean(dim=(2, 3))
        var_b = ((b - mu_b[..., None, None]) ** 2).mean(dim=(2, 3))
        cov = ((a - mu_a[..., None, None]) * (b - mu_b[..., None, None])).mean(dim=(2, 3))
        texture = (2 * mu_a * mu_b + DISTS_C1) / (mu_a ** 2 + mu_b ** 2 + DISTS_C1)
        structure = (2 * cov + DISTS_C2) / (var_a + var_b + DISTS_C2)
        score += float((weight * (texture + structure)).sum(dim=1).mean())
    return 1.0 - score


def embed_images(images, backend):
    return backend.embed(_backend_input(images)).double().cpu().numpy()


def pairwise_metrics(gen, gt, backend: Optional[nn.Module] = None):
    row = {
        'psnr': psnr(gen, gt),
        'ssim': ssim_metric(gen, gt),
        'rmse': rmse(gen, gt),
        'std': pixel_std(gen, gt),
        'lpips': None,
        'dists': None,
    }
    if backend is not None:
        row['lpips'] = lpips(gen, gt, backend)
        row['dists'] = dists(gen, gt, backend)
    return row


def _json_number(value):
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return value


@dataclass
class MetricReport:
    rows: pd.DataFrame
    corpus: Dict[str, Optional[float]]
    backend: str = 'lightweight-stub'
    skipped: List[str] = field(default_factory=list)

    @property
    def directions(self):
        return dict(CONSTANTS['METRIC_DIRECTIONS'])

    @property
    def aggregates(self):
        aggregates = {}
        for metric in CONSTANTS['PAIRWISE_METRICS']:
            column = pd.to_numeric(self.rows[metric], errors='coerce')
            if column.isna().all():
                aggregates[metric] = {'mean': None, 'std': None}
                continue
            values = column.to_numpy(dtype=np.float64)
            with np.errstate(invalid='ignore'):
                aggregates[metric] = {'mean': float(np.mean(values)), 'std': float(np.std(values))}
        return aggregates

    def to_csv(self, file_path):
        frame = self.rows.reset_index()[['id'] + CONSTANTS['PAIRWISE_METRICS']]
        frame.to_csv(file_path, index=False)

    def to_json(self):
        return {
            'backend': self.backend,
            'images': len(self.rows),
            'skipped': list(self.skipped),
            'directions': self.directions,
            'corpus': {name: _json_number(value) for name, value in self.corpus.items()},
            'aggregates': {
                name: {key: _json_number(value) for key, value in stats.items()}
                for name, stats in self.aggregates.items()
            },
            'rows': [
                {'id': pair_id, **{m: _json_number(row[m]) for m in CONSTANTS['PAIRWISE_METRICS']}}
                for pair_id, row in self.rows.iterrows()
            ],
        }

    def write(self, output_dir):
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        self.to_csv(output_dir / 'report.csv')
        with open(output_dir / 'report.json', 'w', encoding='utf-8') as file:
            json.dump(self.to_json(), file, indent=2, ensure_ascii=False)
        return output_dir / 'report.csv', output_dir / 'report.json'

    def format_table(self):
        lines = [f"{'metric':<8}{'dir':<5}{'mean':>12}{'std':>12}"]
        entries = dict(self.aggregates)
        entries['fid'] = {'mean': self.corpus.get('fid'), 'std': None}
        for metric, stats in entries.items():
            arrow = '↑' if self.directions[metric] == 'higher-better' else '↓'
            mean = 'skipped' if stats['mean'] is None else f"{stats['mean']:.4f}"
            std = '' if stats['std'] is None or math.isnan(stats['std']) else f"{stats['std']:.4f}"
            lines.append(f"{metric.upper():<8}{arrow:<5}{mean:>12}{std:>12}")
        return '\n'.join(lines)


def _load_single_channel(file_path):
    return collapse_to_single_channel(load_image(file_path), str(file_path))


def _index_by_stem(directory):
    paths = list_images(directory)
    shared = shared_stems(paths)
    if shared:
        names = sorted(path.name for path in paths if path.stem in shared)
        raise MetricError(f"ambiguous filenames in {directory}: {', '.join(names)}")
    return {path.stem: path for path in paths}


def evaluate_dirs(gen_dir, gt_dir, backend='lightweight-stub', weights_dir='', progress=True):
    gen_files = _index_by_stem(gen_dir)
    gt_files = _index_by_stem(gt_dir)
    if not gen_files:
        raise MetricError(f"no inputs in {gen_dir}")
    missing_gt = sorted(gen_files[key].name for key in set(gen_files) - set(gt_files))
    missing_gen = sorted(gt_files[key].name for key in set(gt_files) - set(gen_files))
    if missing_gt or missing_gen:
        listing = [f"missing ground truth: {name}" for name in missing_gt]
        listing += [f"missing generated: {name}" for name in missing_gen]
        raise MetricError("unmatched filenames:\n  " + '\n  '.join(listing))

    feature_backend = load_backend(backend, weights_dir)
    skipped = [] if feature_backend is not None else ['lpips', 'dists', 'fid']
    rows, gen_embeddings, gt_embeddings = [], [], []
    for key in tqdm(sorted(gen_files), disable=not progress, desc='evaluate'):
        gen = _load_single_channel(gen_files[key])
        gt = _load_single_channel(gt_files[key])
        if gt.shape != gen.shape:
            logger.info("resizing ground truth %s from %s to %s", key, gt.shape[:2], gen.shape[:2])
            gt = resize_image(gt, gen.shape[:2])
        rows.append({'id': key, **pairwise_metrics(gen, gt, feature_backend)})
        if feature_backend is not None:
            gen_embeddings.append(embed_images(gen, feature_backend)[0])
            gt_embeddings.append(embed_images(gt, feature_backend)[0])

    corpus = {'fid': None}
    if feature_backend is not None:
        if len(rows) < 2:
            logger.warning("FID skipped: needs at least 2 images, got %d", len(rows))
            skipped.append('fid')
        else:
            corpus['fid'] = fid(np.stack(gen_embeddings), np.stack(gt_embeddings))

    frame = pd.DataFrame(rows).set_index('id')
    name = feature_backend.name if feature_backend is not None else 'none'
    for metric in skipped:
        logger.warning("metric %s skipped (backend %s)", metric, backend)
    return MetricReport(frame, corpus, name, skipped)
