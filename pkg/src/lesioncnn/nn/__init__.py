"""Dense tensor layer operations, forward and backward, plus gradient checking."""

from .ops import (
    LayerGradients,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    dropout,
    global_pool,
    global_pool_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    sigmoid,
    softmax,
)
from .gradcheck import gradient_check
from . import layers

__all__ = [
    "LayerGradients",
    "conv2d",
    "conv2d_backward",
    "dense",
    "dense_backward",
    "dropout",
    "global_pool",
    "global_pool_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "softmax",
    "gradient_check",
    "layers",
]
