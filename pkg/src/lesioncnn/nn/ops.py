"""Single-sample layer operations with shape validation.

Every forward operation takes plain numpy arrays and returns new arrays;
nothing is mutated. Backward operations return the gradient with respect
to the input and, where the layer has parameters, a :class:`LayerGradients`
bundle whose tensors mirror the forward shapes exactly.

Convolution is valid (no padding); pooling is a fixed 2x2 window with
stride 2. ReLU uses subgradient 0 at exactly 0.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeError
from ..validation import (
    as_float_array,
    check_chw,
    check_conv_weights,
    check_same_shape,
    check_vector,
)
from . import engine


@dataclass
class LayerGradients:
    """Backward-pass results: gradient w.r.t. the input plus one gradient
    per parameter tensor, in the layer's parameter order."""

    input_grad: np.ndarray
    param_grads: list = field(default_factory=list)


def conv2d(input, weights, bias, stride=1):
    """Valid 2D convolution of a (C,H,W) tensor with (O,C,Kh,Kw) kernels.

    Output spatial extent is (H-Kh)//stride + 1 by (W-Kw)//stride + 1.
    """
    x = check_chw(input)
    w = check_conv_weights(weights, x.shape[0])
    b = check_vector(bias, "bias", length=w.shape[0])
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if w.shape[2] > x.shape[1] or w.shape[3] > x.shape[2]:
        raise ShapeError(
            f"kernel {w.shape[2]}x{w.shape[3]} exceeds input {x.shape[1]}x{x.shape[2]}"
        )
    y, _ = engine.conv_forward(x[:, None], w, b, stride)
    return y[:, 0]


def conv2d_backward(input, weights, output_grad, stride=1):
    """Gradients of :func:`conv2d` w.r.t. input, weights, and bias."""
    x = check_chw(input)
    w = check_conv_weights(weights, x.shape[0])
    expected = (
        w.shape[0],
        engine.conv_out_size(x.shape[1], w.shape[2], stride),
        engine.conv_out_size(x.shape[2], w.shape[3], stride),
    )
    dy = as_float_array(output_grad, "output_grad", ndim=3)
    if dy.shape != expected:
        raise ShapeError(f"output_grad shape {dy.shape} does not match {expected}")
    xcb = x[:, None]
    xcol = engine.im2col(xcb, w.shape[2], w.shape[3], stride)
    dx, dw, db = engine.conv_backward(dy[:, None], xcol, w, xcb.shape, stride)
    return LayerGradients(dx[:, 0], [dw, db])


def relu(input):
    """Elementwise max(0, x)."""
    return engine.relu_forward(as_float_array(input, "input"))


def relu_backward(input, output_grad):
    x = as_float_array(input, "input")
    dy = as_float_array(output_grad, "output_grad")
    check_same_shape(x, dy, "input", "output_grad")
    return engine.relu_backward(dy, x)


def maxpool2d(input):
    """2x2, stride-2 max pool of a (C,H,W) tensor.

    Returns (output, indices) where indices holds the row-major position
    (0..3) of each window's maximum; ties go to the first position. A
    trailing odd row or column is dropped (floor semantics).
    """
    x = check_chw(input)
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"input {x.shape[1]}x{x.shape[2]} is smaller than the 2x2 window")
    y, arg = engine.maxpool_forward(x[:, None])
    return y[:, 0], arg[:, 0]


def maxpool2d_backward(indices, output_grad, input_shape):
    """Route output gradients back to the argmax positions."""
    dy = as_float_array(output_grad, "output_grad", ndim=3)
    arg = np.asarray(indices)
    check_same_shape(arg, dy, "indices", "output_grad")
    c, h, w = input_shape
    if (c, h // 2, w // 2) != dy.shape:
        raise ShapeError(f"output_grad shape {dy.shape} does not match pooled {input_shape}")
    return engine.maxpool_backward(dy[:, None], arg[:, None], (c, 1, h, w))[:, 0]


def global_pool(input, mode="average"):
    """Reduce each channel plane of (C,H,W) to a scalar; returns shape (C,)."""
    x = check_chw(input)
    if mode not in ("average", "max"):
        raise ShapeError(f"unknown global pool mode {mode!r}")
    y, _ = engine.global_pool_forward(x[:, None], mode)
    return y[:, 0]


def global_pool_backward(input, output_grad, mode="average"):
    x = check_chw(input)
    dy = check_vector(output_grad, "output_grad", length=x.shape[0])
    xcb = x[:, None]
    if mode == "average":
        return engine.global_pool_backward(dy[:, None], xcb.shape, "average")[:, 0]
    _, arg = engine.global_pool_forward(xcb, "max")
    return engine.global_pool_backward(dy[:, None], xcb.shape, "max", arg)[:, 0]


def dense(input, weights, bias):
    """Affine map W @ x + b for a length-N input and (M,N) weights."""
    x = check_vector(input, "input")
    w = as_float_array(weights, "weights", ndim=2)
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weights expect input length {w.shape[1]}, got {x.shape[0]}")
    b = check_vector(bias, "bias", length=w.shape[0])
    return engine.dense_forward(x[:, None], w, b)[:, 0]


def dense_backward(input, weights, output_grad):
    x = check_vector(input, "input")
    w = as_float_array(weights, "weights", ndim=2)
    dy = check_vector(output_grad, "output_grad", length=w.shape[0])
    dx, dw, db = engine.dense_backward(dy[:, None], x[:, None], w)
    return LayerGradients(dx[:, 0], [dw, db])


def softmax(input):
    """Softmax of a logit vector, computed with max subtraction."""
    x = check_vector(input, "input")
    return engine.softmax_columns(x[:, None])[:, 0]


def sigmoid(input):
    """Elementwise logistic function 1 / (1 + exp(-x))."""
    return engine.sigmoid(as_float_array(input, "input"))


def dropout(input, rate, seed=0, training=True):
    """Inverted dropout: zero each element with probability ``rate`` and
    scale survivors by 1/(1-rate). Identity when rate is 0 or when not
    training. Deterministic for a fixed seed."""
    x = as_float_array(input, "input")
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x.copy()
    mask = engine.dropout_mask(x.shape, rate, np.random.default_rng(seed), x.dtype.type)
    return x * mask
