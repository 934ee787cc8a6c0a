"""Unpaired two-domain image translation with feature-level, decaying and
quality-weighted cycle consistency, on a small numpy autodiff engine."""
from .tensor import Tensor, backward
from .trainer import TrainerConfig, train_loop

__all__ = ["Tensor", "backward", "TrainerConfig", "train_loop"]
__version__ = "0.1.0"
