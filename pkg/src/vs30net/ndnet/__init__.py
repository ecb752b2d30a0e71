"""Minimal numpy tensor core: autodiff, NN layers, Adam."""

from .tensor import (
    DTYPE,
    LayerParams,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    concat,
    grad_enabled,
    mul,
    neg,
    no_grad,
    reshape,
    square,
    sub,
    tmean,
    tsum,
)
from .layers import (
    batch_norm,
    conv1d,
    conv2d,
    conv_output_length,
    dense,
    dropout,
    global_avg_pool,
    glorot_uniform,
    loss,
    max_pool,
    relu,
    take_time_index,
)
from .optim import AdamState, adam_step, effective_lr

__all__ = [
    "DTYPE", "LayerParams", "Tensor", "absolute", "add", "as_tensor",
    "backward", "concat", "grad_enabled", "mul", "neg", "no_grad", "reshape",
    "square", "sub", "tmean", "tsum",
    "batch_norm", "conv1d", "conv2d", "conv_output_length", "dense",
    "dropout", "global_avg_pool", "glorot_uniform", "loss", "max_pool",
    "relu", "take_time_index",
    "AdamState", "adam_step", "effective_lr",
]
