"""Input validation helpers used at the public API boundaries.

Internal hot paths skip these checks; every function exported from the
package validates its arguments here first so shape problems surface with
a clear message instead of a numpy broadcast error.
"""

import numpy as np

from .exceptions import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


def as_float_array(x, name, ndim=None, dtype=None):
    """Coerce ``x`` to a float ndarray, optionally enforcing rank and dtype."""
    arr = np.asarray(x)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    elif dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError(f"{name} must be non-empty")
    return arr


def check_finite(x, name):
    if not np.all(np.isfinite(x)):
        from .exceptions import NumericsError

        raise NumericsError(f"{name} contains non-finite values")


def check_chw(x, name="input"):
    """Validate a single-sample activation tensor of shape (C, H, W)."""
    arr = as_float_array(x, name, ndim=3)
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has a zero extent: {arr.shape}")
    return arr


def check_conv_weights(weights, in_channels, name="weights"):
    w = as_float_array(weights, name, ndim=4)
    if w.shape[1] != in_channels:
        raise ShapeError(
            f"{name} expects {w.shape[1]} input channels but input has {in_channels}"
        )
    return w


def check_vector(x, name, length=None):
    arr = as_float_array(x, name, ndim=1)
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def check_same_shape(a, b, name_a, name_b):
    if tuple(np.shape(a)) != tuple(np.shape(b)):
        raise ShapeError(
            f"{name_a} shape {np.shape(a)} does not match {name_b} shape {np.shape(b)}"
        )


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, (int, np.integer)) or value < minimum:
        raise ShapeError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
