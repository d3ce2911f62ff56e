from .config_utils import load_config, save_config
from .data_utils import load_image, save_image, list_images
from .visualization_utils import create_plot, save_plot

__all__ = ['load_image', 'save_image', 'list_images', 'create_plot', 'save_plot', 'load_config', 'save_config']
