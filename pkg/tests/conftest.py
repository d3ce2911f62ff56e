import copy
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import SETTINGS
from src.core.data_processor import make_synthetic_dataset


@pytest.fixture(scope='session')
def synthetic_root(tmp_path_factory):
    root = tmp_path_factory.mktemp('synthetic')
    make_synthetic_dataset(root, 8, seed=0, resolution=(64, 64))
    return root


@pytest.fixture
def tiny_config(tmp_path, synthetic_root):
    """64×64, base width 32, 2 epochs of B=2 over the 8 synthetic pairs."""
    config = copy.deepcopy(SETTINGS)
    config['data']['root'] = str(synthetic_root)
    config['data']['resolution'] = [64, 64]
    config['generator']['base_channels'] = 32
    config['train'].update({
        'epochs': 2,
        'batch_size': 2,
        'checkpoint_interval': 4,
        'output_dir': str(tmp_path / 'run'),
    })
    return config
