"""Model state: parameters bound to an architecture, plus the batched
forward and backward walks used by training and inference.

Activations run through the channel-major engine layout (C, B, H, W);
the public entry points take and return batch-major arrays (B, ...).
A ModelState is a value: operations return updated copies and never
mutate their input.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .architecture import ArchConfig, infer_shapes
from .data import ClassCatalog
from .exceptions import ClassMismatchError, ShapeError
from .nn import engine


@dataclass(frozen=True)
class ModelState:
    """Architecture plus per-layer parameters and freeze flags.

    ``params`` holds one (weights, bias) pair per parameterized layer in
    network order; ``frozen`` flags parallel it.
    """

    config: ArchConfig
    params: tuple
    frozen: tuple
    init_seed: int
    classes: ClassCatalog

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(tuple(p) for p in self.params))
        object.__setattr__(self, "frozen", tuple(bool(f) for f in self.frozen))
        expected = param_shapes(self.config)
        if len(self.params) != len(expected):
            raise ShapeError(
                "model has %d parameter pairs but the architecture has %d "
                "parameterized layers" % (len(self.params), len(expected))
            )
        for i, ((w, b), (ws, bs)) in enumerate(zip(self.params, expected)):
            if tuple(w.shape) != ws or tuple(b.shape) != bs:
                raise ShapeError(
                    "parameter %d shape %r does not match the architecture's %r"
                    % (i, (tuple(w.shape), tuple(b.shape)), (ws, bs))
                )
        if len(self.frozen) != len(self.params):
            raise ShapeError("frozen flags must cover every parameterized layer")
        if len(self.classes) != self.config.num_classes:
            raise ClassMismatchError(
                "class catalog holds %d codes but the architecture emits %d"
                % (len(self.classes), self.config.num_classes)
            )

    @property
    def dtype(self):
        return self.params[0][0].dtype

    def parameter_count(self):
        return sum(w.size + b.size for w, b in self.params)


def param_shapes(config):
    """(weights shape, bias shape) per parameterized layer, in order."""
    shapes = []
    current = config.input_shape
    for spec, out in zip(config.layers, infer_shapes(config)):
        if spec.kind == "conv":
            shapes.append(((spec.out_channels, current[0]) + spec.kernel, (spec.out_channels,)))
        elif spec.kind == "dense":
            shapes.append(((spec.units, current[0]), (spec.units,)))
        current = out
    return shapes


def init_params(config, seed, classes=None, dtype=np.float32):
    """He-scaled normal weights, zero biases; deterministic per seed.

    Each layer draws from its own seeded stream so a layer's initial
    values do not depend on the layers before it.
    """
    if classes is None:
        classes = ClassCatalog.subset(config.num_classes)
    params = []
    for li, (wshape, bshape) in enumerate(param_shapes(config)):
        fan_in = int(np.prod(wshape[1:]))
        rng = np.random.default_rng((seed, li))
        weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape).astype(dtype)
        params.append((weights, np.zeros(bshape, dtype=dtype)))
    return ModelState(
        config=config,
        params=tuple(params),
        frozen=(False,) * len(params),
        init_seed=int(seed),
        classes=classes,
    )


def freeze_layers(model, fraction):
    """Flag the first ceil(fraction * P) parameterized layers as frozen.

    Flags only; parameter values are untouched.  Frozen parameters
    receive no optimizer updates.
    """
    if not 0 <= fraction <= 1:
        raise ShapeError("freeze fraction must be in [0, 1], got %r" % (fraction,))
    p = len(model.params)
    k = int(np.ceil(fraction * p - 1e-12))
    return replace(model, frozen=(True,) * k + (False,) * (p - k))


def replace_head(model, num_classes, seed, classes=None):
    """Swap the final dense layer for a freshly initialized one.

    All other parameters carry over bit-for-bit; this is the transfer
    step for fine-tuning a checkpoint on a different class count.
    """
    layers = list(model.config.layers)
    head_index = None
    for i in reversed(range(len(layers))):
        if layers[i].kind == "dense":
            head_index = i
            break
    if head_index is None:
        raise ShapeError("architecture has no dense layer to replace")
    layers[head_index] = replace(layers[head_index], units=num_classes)
    config = ArchConfig(
        input_shape=model.config.input_shape,
        layers=tuple(layers),
        num_classes=num_classes,
    )
    if classes is None:
        classes = ClassCatalog.subset(num_classes)
    pi = model.config.parameterized_indices.index(head_index)
    wshape, bshape = param_shapes(config)[pi]
    rng = np.random.default_rng((seed, pi))
    fan_in = int(np.prod(wshape[1:]))
    head = (
        rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape).astype(model.dtype),
        np.zeros(bshape, dtype=model.dtype),
    )
    params = model.params[:pi] + (head,) + model.params[pi + 1:]
    frozen = model.frozen[:pi] + (False,) + model.frozen[pi + 1:]
    return ModelState(config=config, params=params, frozen=frozen,
                      init_seed=model.init_seed, classes=classes)


def run_forward(model, inputs, training=False, dropout_rng=None, with_cache=False):
    """Forward pass over a (B, C, H, W) batch; returns ((B, K) output, caches).

    Training mode samples dropout masks from ``dropout_rng``; inference
    mode treats dropout as identity.  Caches hold what the backward walk
    needs and are built only when requested.
    """
    x = np.ascontiguousarray(np.transpose(inputs, (1, 0, 2, 3)))
    if training and dropout_rng is None:
        raise ShapeError("training-mode forward needs a dropout rng")
    caches = [] if with_cache else None
    pi = 0
    for spec in model.config.layers:
        cache = None
        if spec.kind == "conv":
            weights, bias = model.params[pi]
            pi += 1
            y, xcol = engine.conv_forward(x, weights, bias)
            cache = (x.shape, xcol)
        elif spec.kind == "relu":
            y = engine.relu_forward(x)
            cache = x
        elif spec.kind == "maxpool":
            y, argmax = engine.maxpool_forward(x)
            cache = (x.shape, argmax)
        elif spec.kind == "globalpool":
            y, _ = engine.global_pool_forward(x, "average")
            cache = x.shape
        elif spec.kind == "dense":
            weights, bias = model.params[pi]
            pi += 1
            y = engine.dense_forward(x, weights, bias)
            cache = x
        elif spec.kind == "dropout":
            if training:
                mask = engine.dropout_mask(x.shape, spec.rate, dropout_rng, x.dtype)
                y = x * mask
                cache = mask
            else:
                y = x
        elif spec.kind == "softmax":
            y = engine.softmax_columns(x)
            cache = y
        else:  # sigmoid
            y = engine.sigmoid(x)
            cache = y
        if with_cache:
            caches.append(cache)
        x = y
    return np.ascontiguousarray(x.T), caches


def lowest_trainable_index(model):
    """Param index of the shallowest unfrozen layer, or None if all frozen."""
    for pi, flag in enumerate(model.frozen):
        if not flag:
            return pi
    return None


def run_backward(model, caches, dlogits, lowest=0):
    """Backward walk from head-logit gradients (B, K) to parameter gradients.

    The head activation itself is skipped: ``dlogits`` must already be
    the gradient at the pre-activation logits (the fused softmax and
    cross-entropy rule).  Layers below parameterized layer ``lowest``
    are never visited, so a frozen prefix costs nothing; their gradient
    slots stay None.  Pass ``lowest=None`` for a fully frozen model.
    """
    grads = [None] * len(model.params)
    if lowest is None:
        return grads
    dy = np.ascontiguousarray(dlogits.T)
    pi = len(model.params)
    for i in reversed(range(len(model.config.layers))):
        spec = model.config.layers[i]
        if i == len(model.config.layers) - 1 and spec.kind in ("softmax", "sigmoid"):
            continue
        cache = caches[i]
        if spec.kind == "conv":
            pi -= 1
            x_shape, xcol = cache
            weights, _ = model.params[pi]
            dy, dw, db = engine.conv_backward(
                dy, xcol, weights, x_shape, need_input_grad=pi > lowest
            )
            grads[pi] = (dw, db)
            if pi == lowest:
                break
        elif spec.kind == "dense":
            pi -= 1
            weights, _ = model.params[pi]
            dy, dw, db = engine.dense_backward(dy, cache, weights,
                                               need_input_grad=pi > lowest)
            grads[pi] = (dw, db)
            if pi == lowest:
                break
        elif spec.kind == "relu":
            dy = engine.relu_backward(dy, cache)
        elif spec.kind == "maxpool":
            x_shape, argmax = cache
            dy = engine.maxpool_backward(dy, argmax, x_shape)
        elif spec.kind == "globalpool":
            dy = engine.global_pool_backward(dy, cache, "average")
        elif spec.kind == "dropout":
            if cache is not None:
                dy = dy * cache
        else:
            raise ShapeError(
                "cannot backpropagate through a mid-network %s layer" % (spec.kind,)
            )
    return grads


def predict_proba(model, inputs, batch_size=64):
    """Class probabilities for a (N, C, H, W) array, inference mode.

    Inference always runs in fixed-size chunks so the output is
    independent of how the caller batches the data.
    """
    inputs = np.asarray(inputs)
    if inputs.ndim != 4:
        raise ShapeError("inputs must be (N, C, H, W), got %r" % (inputs.shape,))
    outputs = []
    for start in range(0, inputs.shape[0], batch_size):
        out, _ = run_forward(model, inputs[start:start + batch_size])
        outputs.append(out)
    if not outputs:
        return np.zeros((0, model.config.num_classes), dtype=inputs.dtype)
    return np.concatenate(outputs, axis=0)


def predict_indices(model, inputs, batch_size=64):
    """Predicted class indices: argmax of the class probabilities."""
    return np.argmax(predict_proba(model, inputs, batch_size), axis=1)
