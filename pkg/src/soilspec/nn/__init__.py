from .checkpoint import load_checkpoint, save_checkpoint
from .functional import ShapeError
from .gradcheck import gradient_check
from .layers import BatchNorm, Conv1d, Flatten, Layer, LeakyReLU, Linear
from .model import Model
from .optim import AdamW, NonFiniteGradient

__all__ = [
    "AdamW", "BatchNorm", "Conv1d", "Flatten", "Layer", "LeakyReLU", "Linear", "Model",
    "NonFiniteGradient", "ShapeError", "gradient_check", "load_checkpoint", "save_checkpoint",
]
