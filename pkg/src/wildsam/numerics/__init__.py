"""Minimal dense tensors with reverse-mode autodiff."""
from .fd import fd_gradient, relative_error
from .ops import (
    add, bilinear_matrix, concat, conv2d, conv_transpose2d, div, exp, gelu,
    getitem, global_average_pool, layer_norm, linear, log, matmul, mean, mul,
    neg, pad_edge, power, reshape, resize_bilinear, same_padding,
    scaled_dot_attention, sigmoid, softmax, softplus, stack, sub, swap_last,
    transpose,
)
from .ops import sum as tsum
from .tensor import (
    DimensionError, Function, Tape, TapeError, Tensor, active_tape, as_tensor,
    backward,
)

__all__ = [
    "Tensor", "Tape", "Function", "DimensionError", "TapeError", "backward",
    "active_tape", "as_tensor", "fd_gradient", "relative_error",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "tsum", "mean",
    "reshape", "transpose", "swap_last", "getitem", "concat", "stack", "matmul",
    "softmax", "gelu", "sigmoid", "softplus", "layer_norm", "conv2d",
    "conv_transpose2d", "pad_edge", "global_average_pool",
    "scaled_dot_attention", "linear", "bilinear_matrix", "resize_bilinear",
    "same_padding",
]
