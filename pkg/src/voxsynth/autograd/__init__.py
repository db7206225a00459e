"""Minimal reverse-mode automatic differentiation over dense numpy tensors."""
from .functional import (
    activation,
    axis_gradient,
    clamp,
    conv3d,
    conv3d_transpose,
    instance_norm3d,
    leaky_relu,
    relu,
    select,
    sigmoid,
    square,
    tanh,
)
from .gradcheck import grad_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    default_dtype,
    div,
    float64_mode,
    grad_enabled,
    log,
    mean,
    mul,
    no_grad,
    sqrt,
    sub,
    tabs,
    tsum,
)

__all__ = [
    "Tensor", "as_tensor", "default_dtype", "float64_mode", "grad_enabled", "no_grad",
    "add", "sub", "mul", "div", "tsum", "mean", "tabs", "sqrt", "log",
    "conv3d", "conv3d_transpose", "instance_norm3d", "activation", "relu", "leaky_relu",
    "tanh", "sigmoid", "clamp", "axis_gradient", "square", "select", "grad_check",
]
