"""Small reverse-mode autodiff engine over dense numpy arrays."""

from .layers import Conv2d, Linear, Module
from .ops import (
    abs_,
    activation,
    add,
    add_channel_bias,
    clamp,
    concat_batch,
    conv2d,
    diff,
    leaky_relu,
    linear,
    log_loss_terms,
    mean,
    mse,
    mul,
    neg,
    relu,
    sigmoid,
    spatial_mean,
    sub,
    sum_,
    tanh,
    upsample2x,
)
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tensor, as_tensor, backward, default_dtype, precision

__all__ = [
    "AdamState",
    "Conv2d",
    "Linear",
    "Module",
    "ShapeError",
    "Tensor",
    "abs_",
    "activation",
    "adam_step",
    "add",
    "add_channel_bias",
    "as_tensor",
    "backward",
    "clamp",
    "concat_batch",
    "conv2d",
    "default_dtype",
    "diff",
    "leaky_relu",
    "linear",
    "log_loss_terms",
    "mean",
    "mse",
    "mul",
    "neg",
    "precision",
    "relu",
    "sigmoid",
    "spatial_mean",
    "sub",
    "sum_",
    "tanh",
    "upsample2x",
]
