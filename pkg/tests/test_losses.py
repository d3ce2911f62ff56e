import math

import pytest
import torch
from torchmetrics.functional.image import structural_similarity_index_measure

from src.core.errors import NumericalError, ShapeError
from src.core.losses import (
    LossWeights,
    SSIMParams,
    feature_matching_loss,
    gan_loss,
    ssim_loss,
    ssim_map,
    total_generator_loss,
)


def test_bce_at_zero_logits_is_ln2():
    zeros = torch.zeros(2, 1, 4, 4)
    assert abs(float(gan_loss(zeros, zeros, 'discriminator')) - math.log(2)) < 1e-6
    assert abs(float(gan_loss(None, zeros, 'generator')) - math.log(2)) < 1e-6


def test_perfect_discriminator_limit():
    real = torch.full((1, 1, 4, 4), 1e6)
    fake = torch.full((1, 1, 4, 4), -1e6)
    loss = gan_loss(real, fake, 'discriminator')
    assert torch.isfinite(loss) and float(loss) < 1e-6


def test_lsgan_mode():
    ones = torch.ones(1, 1, 2, 2)
    assert float(gan_loss(ones, torch.zeros_like(ones), 'discriminator', mode='lsgan')) == 0.0
    assert float(gan_loss(None, torch.zeros_like(ones), 'generator', mode='lsgan')) == 1.0


def test_unknown_role_and_mode():
    x = torch.zeros(1, 1, 2, 2)
    with pytest.raises(ValueError):
        gan_loss(x, x, 'critic')
    with pytest.raises(ValueError):
        gan_loss(x, x, mode='hinge')


def test_ssim_map_covers_valid_window_positions():
    a = torch.rand(2, 1, 32, 24, dtype=torch.float64)
    per_pixel, mean = ssim_map(a, a.flip(-1))
    assert per_pixel.shape == (2, 1, 22, 14)
    assert float(mean) == pytest.approx(float(per_pixel.mean()))
    with pytest.raises(ShapeError):
        ssim_map(a, a, SSIMParams(window=10))


def test_ssim_loss_identity():
    a = torch.rand(2, 1, 32, 32, dtype=torch.float64)
    assert float(ssim_loss(a, a)) <= 1e-6


def test_ssim_loss_bounds_on_random_pairs():
    torch.manual_seed(0)
    for _ in range(100):
        a = torch.rand(1, 1, 24, 24)
        b = torch.rand(1, 1, 24, 24)
        value = float(ssim_loss(a, b))
        assert 0.0 <= value <= 2.0


def test_ssim_matches_torchmetrics():
    torch.manual_seed(1)
    a = torch.rand(2, 1, 48, 48, dtype=torch.float64)
    b = (a + 0.1 * torch.randn_like(a)).clamp(0, 1)
    _, ours = ssim_map(a, b)
    reference = structural_similarity_index_measure(b, a, gaussian_kernel=True, sigma=1.5, kernel_size=11,
                                                     data_range=1.0)
    assert abs(float(ours) - float(reference)) < 1e-4


def test_ssim_is_symmetric():
    torch.manual_seed(2)
    a = torch.rand(2, 1, 32, 32, dtype=torch.float64)
    b = torch.rand(2, 1, 32, 32, dtype=torch.float64)
    assert torch.allclose(ssim_map(a, b)[0], ssim_map(b, a)[0], atol=1e-12)


def test_ssim_of_constant_black_and_white():
    black = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
    white = torch.ones_like(black)
    c1 = SSIMParams().c1
    per_pixel, _ = ssim_map(black, white)
    assert torch.allclose(per_pixel, torch.full_like(per_pixel, c1 / (1 + c1)), atol=1e-9)
    assert float(ssim_loss(black, white)) == pytest.approx(1 - c1 / (1 + c1), abs=1e-9)


def test_anti_correlated_pair_loses_more_than_one():
    torch.manual_seed(3)
    a = torch.rand(1, 1, 32, 32, dtype=torch.float64)
    assert float(ssim_loss(a, 1.0 - a)) > 1.0


def test_ssim_follows_batch_order():
    torch.manual_seed(4)
    a = torch.rand(4, 1, 24, 24, dtype=torch.float64)
    b = torch.rand(4, 1, 24, 24, dtype=torch.float64)
    order = torch.tensor([2, 0, 3, 1])
    per_pixel, mean = ssim_map(a, b)
    permuted, permuted_mean = ssim_map(a[order], b[order])
    assert torch.allclose(permuted, per_pixel[order], atol=1e-12)
    assert float(permuted_mean) == pytest.approx(float(mean), abs=1e-12)


def test_ssim_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        ssim_map(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 8))
    with pytest.raises(ShapeError):
        ssim_map(torch.rand(1, 1, 8, 8), torch.rand(1, 1, 8, 8))


def test_feature_matching_zero_on_identical_lists():
    taps = [[torch.rand(1, 4, 8, 8) for _ in range(5)] for _ in range(3)]
    assert float(feature_matching_loss(taps, taps)) == 0.0


def test_feature_matching_sums_layer_means():
    real = [[torch.zeros(1, 2, 2, 2), torch.zeros(1, 1, 1, 1)]]
    fake = [[torch.ones(1, 2, 2, 2), torch.full((1, 1, 1, 1), 3.0)]]
    assert float(feature_matching_loss(real, fake)) == 4.0


def test_feature_matching_detaches_real():
    real = [[torch.rand(1, 2, 4, 4, requires_grad=True)]]
    fake = [[torch.rand(1, 2, 4, 4, requires_grad=True)]]
    feature_matching_loss(real, fake).backward()
    assert real[0][0].grad is None
    assert fake[0][0].grad is not None


def test_total_loss_arithmetic():
    total, breakdown = total_generator_loss(
        torch.tensor(1.0), torch.tensor(0.2), torch.tensor(0.1), LossWeights(10.0, 10.0),
    )
    assert float(total) == pytest.approx(4.0, abs=1e-6)
    assert breakdown['L_total'] == pytest.approx(4.0, abs=1e-6)
    assert set(breakdown) == {'L_GAN', 'L_FM', 'L_SSIM', 'L_total'}


def test_total_loss_sums_scales():
    _, breakdown = total_generator_loss(
        [torch.tensor(0.5), torch.tensor(0.25), torch.tensor(0.25)], torch.tensor(0.0), torch.tensor(0.0),
    )
    assert breakdown['L_GAN'] == 1.0


def test_total_loss_rejects_non_finite():
    with pytest.raises(NumericalError):
        total_generator_loss(torch.tensor(float('nan')), torch.tensor(0.0), torch.tensor(0.0))


def test_feature_matching_ignores_spatial_tiling():
    torch.manual_seed(5)
    real = [[torch.rand(1, 2, 4, 4, dtype=torch.float64)]]
    fake = [[torch.rand(1, 2, 4, 4, dtype=torch.float64)]]
    tiled_real = [[real[0][0].repeat(1, 1, 3, 3)]]
    tiled_fake = [[fake[0][0].repeat(1, 1, 3, 3)]]
    assert float(feature_matching_loss(tiled_real, tiled_fake)) == pytest.approx(
        float(feature_matching_loss(real, fake)), abs=1e-12)


def test_total_loss_grows_by_fm_per_unit_lambda_fm():
    terms = (torch.tensor(0.7), torch.tensor(0.3), torch.tensor(0.2))
    low, _ = total_generator_loss(*terms, LossWeights(lambda_fm=4.0))
    high, _ = total_generator_loss(*terms, LossWeights(lambda_fm=5.0))
    assert float(high - low) == pytest.approx(0.3, abs=1e-6)
