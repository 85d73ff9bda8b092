from .convolution import BACKEND as CONV_BACKEND
from .tensor import (
    ParameterError,
    ShapeError,
    Tensor,
    UsageError,
    add,
    backward,
    broadcast_rows,
    concat,
    depthwise_conv2d,
    gelu,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    reshape,
    slice_,
    softmax,
    sub,
    sum_,
    take_rows,
    transpose,
)

__all__ = [
    "CONV_BACKEND",
    "ParameterError",
    "ShapeError",
    "Tensor",
    "UsageError",
    "add",
    "backward",
    "broadcast_rows",
    "concat",
    "depthwise_conv2d",
    "gelu",
    "layer_norm",
    "matmul",
    "mean",
    "mse",
    "mul",
    "reshape",
    "slice_",
    "softmax",
    "sub",
    "sum_",
    "take_rows",
    "transpose",
]
