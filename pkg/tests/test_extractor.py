import pytest
import torch

from src.core.errors import ExtractorError, ShapeError
from src.core.extractor import (
    ExtractorSpec,
    FeatureMap,
    build_extractor,
    disable,
    extract,
    probe_feature_dim,
)


def test_identity_stub_grid_and_cell_means():
    spec = ExtractorSpec('identity-stub', feature_dim=64, seed=0)
    extractor = build_extractor(spec)
    rgb = torch.rand(2, 3, 256, 256)
    features = extractor(rgb)
    assert features.grid == (8, 8)
    assert features.tokens.shape == (2, 64, 64)

    cell = rgb[0, :, :32, 32:64].mean(dim=(1, 2))
    expected = cell @ extractor.weight + extractor.bias
    torch.testing.assert_close(features.tokens[0, 1], expected, atol=1e-5, rtol=1e-5)


def test_zero_image_tokens_equal_bias():
    extractor = build_extractor(ExtractorSpec('identity-stub'))
    features = extractor(torch.zeros(1, 3, 256, 256))
    assert torch.equal(features.tokens[0], extractor.bias.expand(64, -1))


def test_extract_is_deterministic():
    spec = ExtractorSpec('identity-stub', seed=4)
    rgb = torch.rand(1, 3, 256, 256)
    assert torch.equal(extract(spec, rgb).tokens, extract(spec, rgb).tokens)


def test_stub_accepts_desk_scale_and_rejects_odd_sizes():
    extractor = build_extractor(ExtractorSpec('identity-stub'))
    assert extractor(torch.rand(1, 3, 64, 64)).num_tokens == 64
    with pytest.raises(ShapeError):
        extractor(torch.rand(1, 3, 60, 64))


def test_grid_round_trip():
    features = build_extractor(ExtractorSpec('identity-stub'))(torch.rand(2, 3, 64, 64))
    again = FeatureMap.from_grid(features.to_grid(), features.backbone)
    assert torch.equal(again.tokens, features.tokens)


def test_feature_map_rejects_non_finite():
    with pytest.raises(ExtractorError):
        FeatureMap(torch.tensor([[[float('nan')]]]), (1, 1), 'x')


def test_missing_weights_name_the_file(tmp_path):
    spec = ExtractorSpec('resnet', weights_dir=str(tmp_path))
    with pytest.raises(ExtractorError, match='resnet50.pth'):
        build_extractor(spec)


def test_finetuning_is_rejected():
    with pytest.raises(ExtractorError):
        ExtractorSpec.from_config({'backbone': 'identity-stub', 'finetune': True})


def test_disabled_extractor():
    extractor = disable()
    assert not extractor.enabled
    assert extractor(torch.rand(1, 3, 256, 256)) is None
    assert probe_feature_dim(extractor) is None
    assert build_extractor(ExtractorSpec('none')).enabled is False


def test_stub_parameters_are_frozen():
    extractor = build_extractor(ExtractorSpec('identity-stub'))
    assert all(not p.requires_grad for p in extractor.parameters())
    assert probe_feature_dim(extractor) == (64, 64)
