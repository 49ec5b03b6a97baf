"""Batched layer kernels in channel-major layout.

Activations flow through the network as arrays of shape (C, B, H, W)
("channel, batch, row, column") and fully connected features as (F, B).
With that layout each convolution is a single GEMM whose output is already
in the layout the next layer wants, so no transposes sit between layers.
All reductions have a fixed order, which keeps results bit-deterministic
for a fixed input.

These kernels do no argument validation; the public wrappers in
:mod:`lesioncnn.nn.ops` do.
"""

import numpy as np

POOL = 2  # pooling window and stride are fixed at 2


def conv_out_size(extent, kernel, stride=1):
    return (extent - kernel) // stride + 1


def im2col(x, kh, kw, stride=1):
    """Gather conv windows of ``x`` (C,B,H,W) into (C*kh*kw, B*OH*OW).

    Built with one contiguous slice copy per kernel offset; the column
    ordering matches ``weights.reshape(O, -1)`` so the forward pass is one
    matrix product.
    """
    c, b, h, w = x.shape
    oh = conv_out_size(h, kh, stride)
    ow = conv_out_size(w, kw, stride)
    col = np.empty((c, kh, kw, b, oh, ow), dtype=x.dtype)
    for ki in range(kh):
        ie = ki + (oh - 1) * stride + 1
        for kj in range(kw):
            je = kj + (ow - 1) * stride + 1
            col[:, ki, kj] = x[:, :, ki:ie:stride, kj:je:stride]
    return col.reshape(c * kh * kw, b * oh * ow)


def col2im(dcol, x_shape, kh, kw, stride=1):
    """Scatter-add column gradients back onto the input layout."""
    c, b, h, w = x_shape
    oh = conv_out_size(h, kh, stride)
    ow = conv_out_size(w, kw, stride)
    dcol = dcol.reshape(c, kh, kw, b, oh, ow)
    dx = np.zeros(x_shape, dtype=dcol.dtype)
    for ki in range(kh):
        ie = ki + (oh - 1) * stride + 1
        for kj in range(kw):
            je = kj + (ow - 1) * stride + 1
            dx[:, :, ki:ie:stride, kj:je:stride] += dcol[:, ki, kj]
    return dx


def conv_forward(x, weights, bias, stride=1):
    """Valid convolution of (C,B,H,W) by (O,C,kh,kw). Returns (y, xcol)."""
    o, c, kh, kw = weights.shape
    _, b, h, w = x.shape
    oh = conv_out_size(h, kh, stride)
    ow = conv_out_size(w, kw, stride)
    xcol = im2col(x, kh, kw, stride)
    y = weights.reshape(o, -1) @ xcol
    y += bias[:, None]
    return y.reshape(o, b, oh, ow), xcol


def conv_backward(dy, xcol, weights, x_shape, stride=1, need_input_grad=True):
    """Gradients of conv_forward. Returns (dx or None, dweights, dbias)."""
    o = weights.shape[0]
    dyf = dy.reshape(o, -1)
    dw = (dyf @ xcol.T).reshape(weights.shape)
    db = dyf.sum(axis=1)
    dx = None
    if need_input_grad:
        dcol = weights.reshape(o, -1).T @ dyf
        dx = col2im(dcol, x_shape, weights.shape[2], weights.shape[3], stride)
    return dx, dw, db


def maxpool_forward(x):
    """2x2/stride-2 max pool of (C,B,H,W); trailing odd row/column dropped.

    Returns (y, argmax) where argmax holds the row-major position (0..3)
    of the window maximum; ties resolve to the first position.
    """
    c, b, h, w = x.shape
    oh, ow = h // POOL, w // POOL
    win = x[:, :, : oh * POOL, : ow * POOL].reshape(c, b, oh, POOL, ow, POOL)
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(c, b, oh, ow, POOL * POOL)
    arg = flat.argmax(axis=-1).astype(np.uint8)
    return flat.max(axis=-1), arg


def maxpool_backward(dy, argmax, x_shape):
    c, b, h, w = x_shape
    oh, ow = h // POOL, w // POOL
    dflat = np.zeros((c, b, oh, ow, POOL * POOL), dtype=dy.dtype)
    np.put_along_axis(dflat, argmax[..., None].astype(np.intp), dy[..., None], axis=-1)
    dwin = dflat.reshape(c, b, oh, ow, POOL, POOL).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : oh * POOL, : ow * POOL] = dwin.reshape(c, b, oh * POOL, ow * POOL)
    return dx


def global_pool_forward(x, mode="average"):
    """Reduce each (C,B) channel plane to one value. Returns (y, argmax or None)."""
    c, b, h, w = x.shape
    flat = x.reshape(c, b, h * w)
    if mode == "average":
        return flat.mean(axis=-1), None
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], arg


def global_pool_backward(dy, x_shape, mode="average", argmax=None):
    c, b, h, w = x_shape
    if mode == "average":
        return np.broadcast_to(dy[:, :, None, None] / (h * w), x_shape).astype(dy.dtype).copy()
    dflat = np.zeros((c, b, h * w), dtype=dy.dtype)
    np.put_along_axis(dflat, argmax[..., None], dy[..., None], axis=-1)
    return dflat.reshape(x_shape)


def dense_forward(x, weights, bias):
    """Affine map of feature columns: (M,N) @ (N,B) + (M,1)."""
    return weights @ x + bias[:, None]


def dense_backward(dy, x, weights, need_input_grad=True):
    dw = dy @ x.T
    db = dy.sum(axis=1)
    dx = weights.T @ dy if need_input_grad else None
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return np.where(x > 0, dy, 0.0).astype(dy.dtype)


def softmax_columns(z):
    """Column-wise softmax of (K,B) logits, stabilised by max subtraction."""
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout_mask(shape, rate, rng, dtype):
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / np.asarray(1.0 - rate, dtype=dtype)
