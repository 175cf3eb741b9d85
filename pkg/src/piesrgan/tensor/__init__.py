from .core import (GradientTape, Tensor, active_tape, add, as_tensor, clip, concat,
                   getitem, leaky_relu, log_sigmoid, mean, mul, reshape, square, sub, tsum)
from .nn import batch_norm, conv3d, dense, dropout
from .optim import RMSPropState, rmsprop_step

__all__ = [
    "GradientTape", "Tensor", "active_tape", "add", "as_tensor", "clip", "concat",
    "getitem", "leaky_relu", "log_sigmoid", "mean", "mul", "reshape", "square", "sub",
    "tsum", "batch_norm", "conv3d", "dense", "dropout", "RMSPropState", "rmsprop_step",
]
