"""Differentiable tensor core: autodiff ops, gradient checking, parameters."""

from .gradcheck import GradCheckReport, grad_check
from .params import CheckpointError, ParamStore, load_params, save_params, trunc_normal
from .tensor import (
    DEFAULT_DTYPE,
    MacCounter,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    clamp,
    concat,
    conv2d,
    count_macs,
    div,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layernorm,
    log,
    matmul,
    maximum,
    minimum,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    stack_scalars,
    sub,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "DEFAULT_DTYPE", "MacCounter", "ShapeError", "Tensor", "absolute", "add",
    "as_tensor", "clamp", "concat", "conv2d", "count_macs", "div", "exp",
    "gelu", "getitem", "grad_enabled", "layernorm", "log", "matmul",
    "maximum", "minimum", "mul", "neg", "no_grad", "power", "relu",
    "reshape", "sigmoid", "softmax", "sqrt", "square", "stack_scalars",
    "sub", "tmean", "transpose", "tsum",
    "GradCheckReport", "grad_check",
    "CheckpointError", "ParamStore", "load_params", "save_params", "trunc_normal",
]
