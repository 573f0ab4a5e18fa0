"""Multi-modal user-defined keyword spotting on a float64 numpy autodiff core."""
from .config import ModelConfig, TrainConfig
from .model import MMKWS

__all__ = ["MMKWS", "ModelConfig", "TrainConfig"]
__version__ = "0.1.0"
