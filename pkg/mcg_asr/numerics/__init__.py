from .tensor import Tensor, get_dtype, is_grad_enabled, no_grad, precision, set_precision
from .nn import Module, Parameter
from .optim import Adam, AdamState, PlateauSchedule, clip_grad_norm, plateau_update
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients

__all__ = [
    "Tensor", "get_dtype", "set_precision", "precision", "no_grad", "is_grad_enabled",
    "Module", "Parameter", "Adam", "AdamState", "PlateauSchedule", "clip_grad_norm",
    "plateau_update", "save_checkpoint", "load_checkpoint", "check_gradients",
]
