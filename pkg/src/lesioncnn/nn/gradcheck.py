"""Finite-difference verification of layer backward passes.

The check projects the layer output onto a fixed random direction to get a
scalar objective, evaluates its analytic gradient through ``backward``, and
compares every input and parameter coordinate against a central finite
difference. Large tensors are subsampled at random. Gradient checks are
only meaningful at 64-bit precision; 32-bit inputs are rejected.
"""

import numpy as np

from ..exceptions import NumericsError, ShapeError

#: coordinates checked exhaustively up to this many elements per tensor
SUBSAMPLE_THRESHOLD = 512


def _relative_error(analytic, numeric):
    scale = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / scale


def _coords(arr, rng):
    if arr.size <= SUBSAMPLE_THRESHOLD:
        return list(np.ndindex(arr.shape))
    flat = rng.choice(arr.size, size=SUBSAMPLE_THRESHOLD, replace=False)
    return [np.unravel_index(i, arr.shape) for i in sorted(flat)]


def gradient_check(layer, input, epsilon=1e-5, seed=0):
    """Return the worst relative error between analytic and numeric gradients.

    ``layer`` follows the protocol of :mod:`lesioncnn.nn.layers`: ``params``,
    ``forward``, ``backward``. Layers may expose ``fd_unstable_mask(x, eps)``
    to exclude input coordinates where the objective is not differentiable
    (ReLU inputs at 0, for example).
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ShapeError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    x = np.asarray(input)
    if x.dtype != np.float64 or any(p.dtype != np.float64 for p in layer.params):
        raise ShapeError("gradient_check requires float64 input and parameters")

    rng = np.random.default_rng(seed)
    y = layer.forward(x)
    direction = rng.standard_normal(y.shape)
    input_grad, param_grads = layer.backward(direction)
    if not np.all(np.isfinite(input_grad)):
        raise NumericsError("analytic input gradient is non-finite")

    def objective():
        return float(np.sum(layer.forward(x) * direction))

    skip = None
    if hasattr(layer, "fd_unstable_mask"):
        skip = layer.fd_unstable_mask(x, epsilon)

    worst = 0.0

    def check_tensor(tensor, analytic, skip_mask=None):
        nonlocal worst
        for idx in _coords(tensor, rng):
            if skip_mask is not None and skip_mask[idx]:
                continue
            original = tensor[idx]
            tensor[idx] = original + epsilon
            plus = objective()
            tensor[idx] = original - epsilon
            minus = objective()
            tensor[idx] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            if not np.isfinite(numeric):
                raise NumericsError(f"non-finite finite difference at {idx}")
            worst = max(worst, _relative_error(float(analytic[idx]), numeric))

    check_tensor(x, input_grad, skip)
    for tensor, analytic in zip(layer.params, param_grads):
        if not np.all(np.isfinite(analytic)):
            raise NumericsError("analytic parameter gradient is non-finite")
        check_tensor(tensor, analytic)
    return worst
