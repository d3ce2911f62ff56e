import copy
import json
import os
import sys

import yaml
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from config import SETTINGS, CONSTANTS
from src.core.errors import ConfigError

ENUM_KEYS = {
    'data.layout': CONSTANTS['LAYOUTS'],
    'data.modality': list(CONSTANTS['TARGET_SUBDIRS']),
    'data.interpolation': ['bilinear'],
    # 输入固定为 [0, 1]，不做均值方差标准化
    'data.standardize': [False],
    'extractor.backbone': CONSTANTS['BACKBONES'],
    'extractor.finetune': [False],
    'generator.variant': CONSTANTS['GENERATOR_VARIANTS'],
    'generator.activation': ['silu', 'relu', 'gelu'],
    'generator.skip': ['additive'],
    'generator.downsample': ['stride-conv'],
    'generator.upsample': ['nearest-conv'],
    'discriminator.conditioning': CONSTANTS['CONDITIONING'],
    'discriminator.pyramid_pool': ['avg2x2'],
    'loss.gan_mode': CONSTANTS['GAN_MODES'],
    'loss.ssim_reference': ['target'],
    'train.attention': CONSTANTS['ATTENTION_PLACEMENTS'],
}


def load_config(config_path):
    if not os.path.exists(config_path):
        return {}

    if config_path.endswith('.toml'):
        with open(config_path, 'rb') as file:
            return tomllib.load(file)
    elif config_path.endswith('.yaml') or config_path.endswith('.yml'):
        with open(config_path, 'r', encoding='utf-8') as file:
            return yaml.safe_load(file) or {}
    elif config_path.endswith('.json'):
        with open(config_path, 'r', encoding='utf-8') as file:
            return json.load(file)
    else:
        raise ValueError("Unsupported config file format")


def save_config(config, config_path):
    parent = os.path.dirname(config_path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    if config_path.endswith('.toml'):
        with open(config_path, 'wb') as file:
            tomli_w.dump(config, file)
    elif config_path.endswith('.yaml') or config_path.endswith('.yml'):
        with open(config_path, 'w', encoding='utf-8') as file:
            yaml.dump(config, file, allow_unicode=True)
    elif config_path.endswith('.json'):
        with open(config_path, 'w', encoding='utf-8') as file:
            json.dump(config, file, ensure_ascii=False, indent=2)
    else:
        raise ValueError("Unsupported config file format")


def merge_config(base, override):
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")['v']
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(config, overrides):
    updated = copy.deepcopy(config)
    for item in overrides or []:
        item = item[2:] if item.startswith('--') else item
        if '=' not in item:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, raw = item.split('=', 1)
        parts = dotted.strip().split('.')
        if len(parts) != 2:
            raise ConfigError(dotted, "override key must be section.key")
        section, key = parts
        updated.setdefault(section, {})[key] = _parse_value(raw.strip())
    return updated


def validate_config(config, defaults=SETTINGS):
    for section, values in config.items():
        if section not in defaults:
            raise ConfigError(section, "unknown config section")
        if not isinstance(values, dict):
            raise ConfigError(section, "section must be a table")
        for key, value in values.items():
            path = f"{section}.{key}"
            if key not in defaults[section]:
                raise ConfigError(path, "unknown config key")
            default = defaults[section][key]
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(path, f"expected a boolean, got {value!r}")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(path, f"expected a number, got {value!r}")
                if value < 0:
                    raise ConfigError(path, f"must be non-negative, got {value!r}")
            if path in ENUM_KEYS and value not in ENUM_KEYS[path]:
                raise ConfigError(path, f"{value!r} not in {ENUM_KEYS[path]}")

    train = config.get('train', {})
    if train.get('batch_size', 1) < 1:
        raise ConfigError('train.batch_size', "must be >= 1")
    for key in ('lr_g', 'lr_d'):
        if train.get(key, 1.0) <= 0:
            raise ConfigError(f'train.{key}', "learning rate must be > 0")
    resolution = config.get('data', {}).get('resolution', [256, 256])
    if not _is_number_list(resolution, 2) or any(side <= 0 or side % 8 for side in resolution):
        raise ConfigError('data.resolution', f"need two positive sides divisible by 8, got {resolution!r}")
    betas = train.get('betas', [0.5, 0.999])
    if not _is_number_list(betas, 2) or any(not 0 <= beta < 1 for beta in betas):
        raise ConfigError('train.betas', f"need two numbers in [0, 1), got {betas!r}")
    window = config.get('loss', {}).get('ssim_window', 11)
    if window < 3 or window % 2 == 0:
        raise ConfigError('loss.ssim_window', f"must be odd and >= 3, got {window!r}")
    return config


def _is_number_list(value, length):
    return (
        isinstance(value, (list, tuple)) and len(value) == length
        and all(isinstance(item, (int, float)) and not isinstance(item, bool) for item in value)
    )


def resolve_run_config(config_path=None, overrides=None, seed=None):
    """Defaults, then the config file, then dotted overrides, then ``--seed``."""
    user_config = load_config(config_path) if config_path else {}
    if config_path and not user_config and not os.path.exists(config_path):
        raise ConfigError('--config', f"config file not found: {config_path}")
    validate_config(user_config)
    config = merge_config(SETTINGS, user_config)
    config = apply_overrides(config, overrides)
    if seed is not None:
        config['train']['seed'] = int(seed)
    return validate_config(config)
