from .tensor import Tensor, as_const, parameter
from . import ops
from .optim import ParamStore, clip_global_norm, fan_in_uniform, rmsprop_update
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor", "as_const", "parameter", "ops", "ParamStore",
    "clip_global_norm", "fan_in_uniform", "rmsprop_update",
    "GradCheckReport", "grad_check",
]
