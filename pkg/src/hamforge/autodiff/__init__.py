"""Dense float64 tensors with reverse-mode differentiation."""
from . import nn
from .gradcheck import grad_check, grad_check_fn, numeric_gradient, relative_error
from .linalg import svd3
from .params import ParamSet, init_params, load_checkpoint, save_checkpoint
from .tensor import (
    Tensor,
    add,
    astensor,
    backward,
    concat,
    div,
    exp,
    getitem,
    grad,
    leaky_relu,
    log,
    matmul,
    maximum,
    mean,
    mul,
    power,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
    where,
)

__all__ = [
    "ParamSet", "Tensor", "add", "astensor", "backward", "concat", "div", "exp", "getitem",
    "grad", "grad_check", "grad_check_fn", "init_params", "leaky_relu", "load_checkpoint", "log",
    "matmul", "maximum", "mean", "mul", "nn", "numeric_gradient", "power", "relative_error",
    "relu", "reshape", "save_checkpoint", "segment_softmax", "segment_sum", "sigmoid", "softmax",
    "sqrt", "square", "stack", "sub", "svd3", "swapaxes", "tanh", "transpose", "tsum", "where",
]
