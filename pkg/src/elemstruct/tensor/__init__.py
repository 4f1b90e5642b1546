"""Numpy-backed tensor engine: autograd core, layers, Adam, checks, checkpoints."""

from .core import (
    Tensor,
    add,
    as_tensor,
    batch_norm,
    concat,
    default_dtype,
    get_default_dtype,
    linear,
    matmul,
    max_pool_points,
    no_grad,
    relu,
    set_default_dtype,
    sorted_mean,
    tanh,
)
from .gradcheck import GradCheckReport, grad_check
from .nn import MLP, BatchNorm1d, Linear, Module, Parameter, count
from .optim import Adam, AdamState, step_decay_lr

# alternate names
linear_forward = linear
tanh_op = tanh

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm1d",
    "GradCheckReport",
    "Linear",
    "MLP",
    "Module",
    "Parameter",
    "Tensor",
    "add",
    "as_tensor",
    "batch_norm",
    "concat",
    "count",
    "default_dtype",
    "get_default_dtype",
    "grad_check",
    "linear",
    "linear_forward",
    "matmul",
    "max_pool_points",
    "no_grad",
    "relu",
    "set_default_dtype",
    "sorted_mean",
    "step_decay_lr",
    "tanh",
    "tanh_op",
]
