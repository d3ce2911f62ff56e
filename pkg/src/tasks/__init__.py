from .trainer import Trainer, TrainConfig
from .translator import Translator
from .evaluator import Evaluator

__all__ = ['Trainer', 'TrainConfig', 'Translator', 'Evaluator']
