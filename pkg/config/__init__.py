from .settings import SETTINGS
from .constants import CONSTANTS

__all__ = ['SETTINGS', 'CONSTANTS']
