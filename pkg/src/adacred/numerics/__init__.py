"""Minimal dense tensor library with reverse-mode autodiff and Adam."""

from . import functional, kernels
from .functional import (
    conv2d,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    layer_norm,
    log_softmax,
    logit,
    softmax,
    straight_through,
)
from .gradcheck import check_gradients, check_gradients_mixed, max_rel_error, numerical_grad
from .optim import Adam, AdamConfig, OptimizerState, adam_step, lr_at
from .tensor import (
    Tape,
    Tensor,
    absolute,
    as_tensor,
    concat,
    current_tape,
    default_dtype,
    get_default_dtype,
    getitem,
    linear,
    matmul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    stack,
    swapaxes,
    transpose,
    tsum,
)

BACKEND = kernels.BACKEND

__all__ = [
    "Adam", "AdamConfig", "BACKEND", "OptimizerState", "Tape", "Tensor", "absolute", "adam_step",
    "as_tensor", "check_gradients", "check_gradients_mixed", "concat", "conv2d", "cross_entropy", "current_tape",
    "default_dtype", "dropout", "embedding", "functional", "gelu", "get_default_dtype", "getitem",
    "layer_norm", "linear", "log_softmax", "logit", "lr_at", "matmul", "max_rel_error", "no_grad",
    "numerical_grad", "relu", "reshape", "set_default_dtype", "sigmoid", "softmax", "stack",
    "straight_through", "swapaxes", "transpose", "tsum",
]
