import json
import math

import numpy as np
import pandas as pd
import pytest
import torch
from PIL import Image
from torchmetrics.functional.image import peak_signal_noise_ratio

from src.core.errors import MetricError, ShapeError
from src.core.losses import ssim_map
from src.core.metrics import (
    StubBackend,
    dists,
    evaluate_dirs,
    fid,
    frechet_distance,
    load_backend,
    lpips,
    pixel_std,
    psnr,
    rmse,
    ssim_metric,
    to_three_channels,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_psnr_identity_and_offset(rng):
    gt = rng.random((32, 32, 1)) * 0.8
    assert psnr(gt, gt) == math.inf
    assert psnr(gt + 0.1, gt) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_torchmetrics(rng):
    gt = rng.random((32, 32))
    gen = np.clip(gt + 0.05 * rng.standard_normal((32, 32)), 0, 1)
    reference = peak_signal_noise_ratio(torch.from_numpy(gen), torch.from_numpy(gt), data_range=1.0)
    assert psnr(gen, gt) == pytest.approx(float(reference), abs=1e-6)


def test_rmse_and_std(rng):
    gt = rng.random((16, 16)) * 0.8
    assert rmse(gt, gt) == 0.0
    assert pixel_std(gt, gt) == 0.0
    assert rmse(gt + 0.1, gt) == pytest.approx(25.5, abs=1e-9)
    checker = ((np.indices((16, 16)).sum(axis=0) % 2) * 2 - 1) * 0.1
    assert pixel_std(gt + checker, gt) == pytest.approx(25.5, abs=1e-9)


def test_psnr_rmse_consistency(rng):
    for _ in range(10):
        gt = rng.random((16, 16))
        gen = np.clip(gt + 0.1 * rng.standard_normal((16, 16)), 0, 1)
        assert psnr(gen, gt) == pytest.approx(20 * math.log10(255 / rmse(gen, gt)), abs=1e-6)


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        psnr(rng.random((8, 8)), rng.random((8, 4)))
    with pytest.raises(ShapeError):
        rmse(rng.random((8, 8)), rng.random((8, 4)))


def test_ssim_metric_shares_loss_implementation(rng):
    gt = rng.random((32, 32))
    gen = np.clip(gt + 0.1 * rng.standard_normal((32, 32)), 0, 1)
    assert ssim_metric(gt, gt) == pytest.approx(1.0, abs=1e-12)
    _, shared = ssim_map(torch.from_numpy(gen)[None, None], torch.from_numpy(gt)[None, None])
    assert ssim_metric(gen, gt) == float(shared)


def test_fid_closed_forms(rng):
    assert frechet_distance([0.0], [[1.0]], [1.0], [[4.0]]) == pytest.approx(2.0, abs=1e-9)
    features = rng.standard_normal((50, 6))
    assert abs(fid(features, features)) < 1e-6


def test_fid_is_symmetric_and_order_invariant(rng):
    a = rng.standard_normal((40, 5))
    b = rng.standard_normal((40, 5)) * 1.5 + 0.3
    forward = fid(a, b)
    assert fid(b, a) == pytest.approx(forward, abs=1e-6)
    assert fid(a[::-1], b[rng.permutation(40)]) == pytest.approx(forward, abs=1e-9)


def test_fid_handles_singular_covariance(rng):
    low_rank = rng.standard_normal((5, 10))
    assert abs(fid(low_rank, low_rank)) < 1e-6


def test_fid_needs_two_images(rng):
    with pytest.raises(MetricError):
        fid(rng.standard_normal((1, 4)), rng.standard_normal((3, 4)))


def test_stub_backend_is_deterministic():
    images = torch.rand(2, 3, 32, 32)
    a, b = StubBackend(), StubBackend()
    assert torch.equal(a.embed(images), b.embed(images))
    assert a.embed(images).shape == (2, a.embedding_dim)


def test_perceptual_metrics_zero_at_identity(rng):
    backend = StubBackend()
    gt = rng.random((32, 32, 1))
    assert abs(lpips(gt, gt, backend)) < 1e-6
    assert abs(dists(gt, gt, backend)) < 1e-6


def test_lpips_noise_ladder(rng):
    backend = StubBackend()
    gt = rng.random((64, 64, 1))
    noise = rng.standard_normal(gt.shape)
    scores = [lpips(np.clip(gt + sigma * noise, 0, 1), gt, backend) for sigma in (0.05, 0.1, 0.2)]
    assert scores[0] < scores[1] < scores[2]


def test_to_three_channels():
    assert to_three_channels(torch.rand(2, 1, 4, 4)).shape == (2, 3, 4, 4)
    with pytest.raises(ShapeError):
        to_three_channels(torch.rand(2, 2, 4, 4))


def test_backend_loading(tmp_path):
    assert load_backend('none') is None
    assert isinstance(load_backend('lightweight-stub'), StubBackend)
    assert load_backend('inception-like', str(tmp_path)) is None
    with pytest.raises(MetricError):
        load_backend('vgg')


def write_corpus(directory, arrays):
    directory.mkdir(parents=True, exist_ok=True)
    for index, array in enumerate(arrays):
        Image.fromarray(np.rint(array * 255).astype(np.uint8)).save(directory / f"img_{index:02d}.png")


@pytest.fixture
def corpora(tmp_path, rng):
    gt = [rng.random((32, 32)) for _ in range(6)]
    noisy = [np.clip(image + 0.2 * rng.standard_normal(image.shape), 0, 1) for image in gt]
    write_corpus(tmp_path / 'gt', gt)
    write_corpus(tmp_path / 'noisy', noisy)
    return tmp_path / 'gt', tmp_path / 'noisy'


def test_identity_corpus(corpora, tmp_path):
    gt_dir, _ = corpora
    report = evaluate_dirs(gt_dir, gt_dir, progress=False)
    assert len(report.rows) == 6
    assert (report.rows['psnr'] == math.inf).all()
    assert ((report.rows['ssim'] - 1.0).abs() < 1e-12).all()
    assert (report.rows['rmse'] == 0.0).all()
    assert (report.rows['std'] == 0.0).all()
    assert abs(report.corpus['fid']) < 1e-6


def test_noise_corpus_ranks_worse(corpora):
    gt_dir, noisy_dir = corpora
    clean = evaluate_dirs(gt_dir, gt_dir, progress=False).aggregates
    report = evaluate_dirs(noisy_dir, gt_dir, progress=False)
    noisy = report.aggregates
    assert noisy['psnr']['mean'] < clean['psnr']['mean']
    assert noisy['ssim']['mean'] < clean['ssim']['mean']
    for metric in ('rmse', 'std', 'lpips', 'dists'):
        assert noisy[metric]['mean'] > clean[metric]['mean']
    assert report.corpus['fid'] > 1e-6


def test_report_files(corpora, tmp_path):
    gt_dir, noisy_dir = corpora
    report = evaluate_dirs(noisy_dir, gt_dir, progress=False)
    csv_path, json_path = report.write(tmp_path / 'out')
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ['id', 'psnr', 'ssim', 'rmse', 'std', 'lpips', 'dists']
    summary = json.loads(json_path.read_text())
    for metric in ('psnr', 'ssim', 'rmse', 'std', 'lpips', 'dists'):
        assert abs(frame[metric].mean() - summary['aggregates'][metric]['mean']) < 1e-9
    assert summary['directions']['fid'] == 'lower-better'
    assert '↑' in report.format_table() and '↓' in report.format_table()


def test_backends_none_marks_skipped(corpora, tmp_path):
    gt_dir, noisy_dir = corpora
    report = evaluate_dirs(noisy_dir, gt_dir, backend='none', progress=False)
    summary = report.to_json()
    assert summary['corpus']['fid'] is None
    assert summary['aggregates']['lpips']['mean'] is None
    assert all(row['dists'] is None for row in summary['rows'])
    assert set(report.skipped) == {'lpips', 'dists', 'fid'}


def test_unmatched_filenames_are_listed(corpora, tmp_path):
    gt_dir, noisy_dir = corpora
    (gt_dir / 'img_03.png').unlink()
    with pytest.raises(MetricError, match='img_03.png'):
        evaluate_dirs(noisy_dir, gt_dir, progress=False)


def test_same_stem_with_two_extensions_is_rejected(corpora):
    gt_dir, noisy_dir = corpora
    Image.open(gt_dir / 'img_01.png').save(gt_dir / 'img_01.jpg')
    with pytest.raises(MetricError, match='img_01.jpg'):
        evaluate_dirs(noisy_dir, gt_dir, progress=False)


def test_ground_truth_resized_to_generated(tmp_path, rng):
    gt = rng.random((64, 64))
    write_corpus(tmp_path / 'gt', [gt, gt])
    small = np.asarray(Image.open(tmp_path / 'gt' / 'img_00.png').resize((32, 32)), dtype=np.float64) / 255
    write_corpus(tmp_path / 'gen', [small, small])
    report = evaluate_dirs(tmp_path / 'gen', tmp_path / 'gt', backend='none', progress=False)
    assert len(report.rows) == 2
