from pathlib import Path

import pytest

from config import SETTINGS
from src.core.errors import ConfigError
from src.utils.config_utils import (
    apply_overrides,
    load_config,
    merge_config,
    resolve_run_config,
    save_config,
    validate_config,
)

PRESETS = Path(__file__).resolve().parent.parent / 'config' / 'presets'


def test_defaults_validate():
    assert validate_config(SETTINGS) is SETTINGS


def test_merge_keeps_untouched_keys():
    merged = merge_config(SETTINGS, {'train': {'batch_size': 8}})
    assert merged['train']['batch_size'] == 8
    assert merged['train']['lr_g'] == SETTINGS['train']['lr_g']
    assert SETTINGS['train']['batch_size'] == 4


def test_overrides_parse_toml_values():
    config = apply_overrides(SETTINGS, ['--train.attention=B-only', 'train.lr_g=2e-4', 'data.resolution=[64, 64]'])
    assert config['train']['attention'] == 'B-only'
    assert config['train']['lr_g'] == 2e-4
    assert config['data']['resolution'] == [64, 64]


@pytest.mark.parametrize('override, key', [
    ('train.atention=EBD', 'train.atention'),
    ('train.attention=middle', 'train.attention'),
    ('train.batch_size=-1', 'train.batch_size'),
    ('train.lr_g=0', 'train.lr_g'),
    ('data.resolution=[60, 64]', 'data.resolution'),
    ('data.augment=1', 'data.augment'),
    ('data.standardize=true', 'data.standardize'),
    ('data.resolution=[0, 0]', 'data.resolution'),
    ('data.resolution=[64]', 'data.resolution'),
    ('data.resolution="64x64"', 'data.resolution'),
    ('train.betas=[0.9]', 'train.betas'),
    ('train.betas=[0.5, 1.0]', 'train.betas'),
    ('train.betas="0.5,0.9"', 'train.betas'),
    ('loss.ssim_window=10', 'loss.ssim_window'),
    ('data.cache_size=-1', 'data.cache_size'),
])
def test_invalid_values_name_the_key(override, key):
    with pytest.raises(ConfigError) as info:
        resolve_run_config(overrides=[override])
    assert info.value.key == key
    assert key in str(info.value)


def test_malformed_override():
    with pytest.raises(ConfigError):
        apply_overrides(SETTINGS, ['train.attention'])
    with pytest.raises(ConfigError):
        apply_overrides(SETTINGS, ['attention=EBD'])


def test_precedence(tmp_path):
    path = tmp_path / 'run.toml'
    save_config({'train': {'seed': 3, 'batch_size': 2}}, str(path))
    config = resolve_run_config(str(path), ['train.batch_size=6'], seed=9)
    assert config['train']['batch_size'] == 6
    assert config['train']['seed'] == 9


@pytest.mark.parametrize('suffix', ['.toml', '.yaml', '.json'])
def test_save_and_load(tmp_path, suffix):
    path = str(tmp_path / f"config{suffix}")
    save_config(SETTINGS, path)
    assert load_config(path) == SETTINGS


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        resolve_run_config(str(tmp_path / 'absent.toml'))


@pytest.mark.parametrize('preset', sorted(PRESETS.glob('*.toml')), ids=lambda path: path.stem)
def test_presets_resolve(preset):
    config = resolve_run_config(str(preset))
    assert config['train']['attention'] in ('EBD', 'B-only')


def test_attention_presets():
    assert resolve_run_config(str(PRESETS / 'ablate-attention-B.toml'))['train']['attention'] == 'B-only'
    assert resolve_run_config(str(PRESETS / 'ablate-extractor-none.toml'))['extractor']['backbone'] == 'none'
    residual = resolve_run_config(str(PRESETS / 'ablate-generator-residual.toml'))
    assert residual['generator']['variant'] == 'residual'
