from .data_processor import DataProcessor, load_manifest, make_synthetic_dataset
from .generator import build_generator
from .discriminator import build_discriminators
from .metrics import evaluate_dirs
from .visualizer import Visualizer

__all__ = ['DataProcessor', 'load_manifest', 'make_synthetic_dataset', 'build_generator',
           'build_discriminators', 'evaluate_dirs', 'Visualizer']
