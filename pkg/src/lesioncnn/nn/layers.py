"""Single-sample layer objects used for composition and gradient checking.

Each layer exposes ``params`` (a list of parameter arrays, possibly empty),
``forward(x)`` which caches what the backward pass needs, and
``backward(output_grad)`` returning ``(input_grad, param_grads)`` with
``param_grads`` aligned to ``params``. The batched training path in
:mod:`lesioncnn.model` uses the same kernels but does not go through these
objects.
"""

import numpy as np

from ..exceptions import ShapeError
from . import engine, ops


class Layer:
    params: list

    def __init__(self):
        self.params = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, output_grad):
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, weights, bias, stride=1):
        super().__init__()
        self.weights = np.asarray(weights)
        self.bias = np.asarray(bias)
        self.stride = stride
        self.params = [self.weights, self.bias]
        self._x = None

    def forward(self, x):
        self._x = np.asarray(x)
        return ops.conv2d(self._x, self.weights, self.bias, self.stride)

    def backward(self, output_grad):
        g = ops.conv2d_backward(self._x, self.weights, output_grad, self.stride)
        return g.input_grad, g.param_grads


class Dense(Layer):
    def __init__(self, weights, bias):
        super().__init__()
        self.weights = np.asarray(weights)
        self.bias = np.asarray(bias)
        self.params = [self.weights, self.bias]
        self._x = None

    def forward(self, x):
        self._x = np.asarray(x)
        return ops.dense(self._x, self.weights, self.bias)

    def backward(self, output_grad):
        g = ops.dense_backward(self._x, self.weights, output_grad)
        return g.input_grad, g.param_grads


class ReLU(Layer):
    def forward(self, x):
        self._x = np.asarray(x)
        return ops.relu(self._x)

    def backward(self, output_grad):
        return ops.relu_backward(self._x, output_grad), []

    def fd_unstable_mask(self, x, epsilon):
        # finite differences straddle the kink at 0
        return np.abs(x) <= epsilon


class MaxPool2D(Layer):
    def forward(self, x):
        self._shape = np.shape(x)
        y, self._arg = ops.maxpool2d(x)
        return y

    def backward(self, output_grad):
        return ops.maxpool2d_backward(self._arg, output_grad, self._shape), []


class GlobalPool(Layer):
    def __init__(self, mode="average"):
        super().__init__()
        if mode not in ("average", "max"):
            raise ShapeError(f"unknown global pool mode {mode!r}")
        self.mode = mode

    def forward(self, x):
        self._x = np.asarray(x)
        return ops.global_pool(self._x, self.mode)

    def backward(self, output_grad):
        return ops.global_pool_backward(self._x, output_grad, self.mode), []


class Dropout(Layer):
    """Inverted dropout; identity when ``training`` is False or rate is 0."""

    def __init__(self, rate, seed=0, training=True):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self.training = training
        self._mask = None

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x.copy()
        self._mask = engine.dropout_mask(
            x.shape, self.rate, np.random.default_rng(self.seed), x.dtype.type
        )
        return x * self._mask

    def backward(self, output_grad):
        dy = np.asarray(output_grad)
        if self._mask is None:
            return dy.copy(), []
        return dy * self._mask, []


class Sigmoid(Layer):
    def forward(self, x):
        self._y = ops.sigmoid(x)
        return self._y

    def backward(self, output_grad):
        return output_grad * self._y * (1.0 - self._y), []


class Softmax(Layer):
    def forward(self, x):
        self._y = ops.softmax(x)
        return self._y

    def backward(self, output_grad):
        y, dy = self._y, np.asarray(output_grad)
        return y * (dy - np.dot(dy, y)), []
