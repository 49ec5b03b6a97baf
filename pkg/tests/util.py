"""Shared helpers for the test suite: an independent central finite
difference oracle and brute-force reference implementations."""

import numpy as np


def numeric_grad(f, x, eps=1e-6):
    """Central finite differences of scalar-valued ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        plus = f(x)
        x[idx] = orig - eps
        minus = f(x)
        x[idx] = orig
        g[idx] = (plus - minus) / (2.0 * eps)
        it.iternext()
    return g


def brute_conv2d(x, w, b, stride=1):
    """Loop-based valid convolution used as an oracle."""
    o, c, kh, kw = w.shape
    _, h, wid = x.shape
    oh = (h - kh) // stride + 1
    ow = (wid - kw) // stride + 1
    y = np.zeros((o, oh, ow))
    for f in range(o):
        for i in range(oh):
            for j in range(ow):
                window = x[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                y[f, i, j] = np.sum(window * w[f]) + b[f]
    return y


def brute_maxpool(x):
    """Loop-based 2x2/2 max pool oracle; returns (y, flat window argmax)."""
    c, h, w = x.shape
    oh, ow = h // 2, w // 2
    y = np.zeros((c, oh, ow))
    arg = np.zeros((c, oh, ow), dtype=int)
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                window = x[ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                y[ch, i, j] = window.max()
                arg[ch, i, j] = int(window.flatten().argmax())
    return y, arg
