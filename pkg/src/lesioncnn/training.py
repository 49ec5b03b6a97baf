"""Training: class-weighted categorical cross-entropy, Adam, and the
epoch loop with per-epoch history.

Every random choice (shuffling, dropout, augmentation) flows from the
single seed in TrainConfig, so a run is one deterministic sequence of
updates.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import class_weights as balanced_class_weights
from .exceptions import ClassMismatchError, NumericsError, ShapeError, TrainingDiverged
from .model import freeze_layers, lowest_trainable_index, run_backward, run_forward

PROB_CLIP = 1e-7  # caps -log p; the best attainable loss is -log(1 - 1e-7)


def weighted_cce(probs, targets, class_weights):
    """Class-weighted categorical cross-entropy and its logit gradient.

    Returns (loss, dlogits) where loss is the batch mean of
    w_c(i) * (-log p_i[c(i)]) with probabilities clipped to
    [1e-7, 1 - 1e-7] before the log, and dlogits is the gradient with
    respect to pre-softmax logits, w_c(i) * (p_i - y_i) / B.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != targets.shape:
        raise ShapeError(
            "probs %r and targets %r must be matching (batch, K) arrays"
            % (probs.shape, targets.shape)
        )
    if class_weights.shape != (probs.shape[1],):
        raise ShapeError(
            "class_weights must have length %d, got %r"
            % (probs.shape[1], class_weights.shape)
        )
    t64 = targets.astype(np.float64)
    one_hot = np.all((t64 == 0.0) | (t64 == 1.0)) and np.all(t64.sum(axis=1) == 1.0)
    if not one_hot:
        raise ShapeError("every target row must be one-hot")
    p64 = probs.astype(np.float64)
    sample_weights = t64 @ class_weights
    picked = np.clip((p64 * t64).sum(axis=1), PROB_CLIP, 1.0 - PROB_CLIP)
    loss = float(np.mean(sample_weights * -np.log(picked)))
    dlogits = (sample_weights[:, None] * (p64 - t64) / probs.shape[0]).astype(probs.dtype)
    return loss, dlogits


@dataclass(frozen=True)
class AdamState:
    """First and second moment estimates mirroring the parameter list."""

    m: tuple
    v: tuple
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    zeros = tuple(
        tuple(np.zeros_like(t) for t in pair) for pair in params
    )
    return AdamState(m=zeros, v=zeros, t=0, lr=lr, beta1=beta1, beta2=beta2,
                     epsilon=epsilon)


def adam_step(params, grads, state):
    """One Adam update with bias correction; pure in all arguments.

    ``grads`` entries may be None (frozen or skipped layers): those
    parameters and their moments pass through unchanged.  Non-finite
    gradients abort the step.
    """
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params = []
    new_m = []
    new_v = []
    for pair, gpair, mpair, vpair in zip(params, grads, state.m, state.v):
        if gpair is None:
            new_params.append(pair)
            new_m.append(mpair)
            new_v.append(vpair)
            continue
        out_p, out_m, out_v = [], [], []
        for theta, g, m, v in zip(pair, gpair, mpair, vpair):
            if not np.all(np.isfinite(g)):
                raise NumericsError("non-finite gradient for a tensor of shape %r"
                                    % (g.shape,))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * np.square(g)
            update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
            out_p.append(theta - update)
            out_m.append(m)
            out_v.append(v)
        new_params.append(tuple(out_p))
        new_m.append(tuple(out_m))
        new_v.append(tuple(out_v))
    return tuple(new_params), replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``class_weights`` defaults to the balanced inverse-frequency weights
    of the training split.  ``dropout_rate`` is consumed where the
    architecture is built; an explicit architecture keeps its own rates.
    ``augment`` takes the augmentation sampling ranges, or None to train
    on the images as preprocessed.
    """

    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    class_weights: Optional[tuple] = None
    dropout_rate: float = 0.5
    seed: int = 0
    freeze_fraction: Optional[float] = None
    augment: Optional[object] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ShapeError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ShapeError("dropout_rate must be in [0, 1)")
        if self.lr <= 0:
            raise ShapeError("learning rate must be positive")
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))


@dataclass
class TrainHistory:
    """Per-epoch loss and accuracy on the train and validation sets."""

    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def write_csv(self, path):
        """History file: epoch,train_loss,train_acc,val_loss,val_acc with
        6-significant-digit decimals."""
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
            for i in range(len(self.train_loss)):
                handle.write(
                    "%d,%.6g,%.6g,%.6g,%.6g\n"
                    % (i + 1, self.train_loss[i], self.train_acc[i],
                       self.val_loss[i], self.val_acc[i])
                )


def _evaluate(model, data, weights, batch_size=64):
    """Inference-mode loss and accuracy over a dataset; streamed in fixed
    chunks so results do not depend on the training batch size."""
    total = 0
    correct = 0
    loss_sum = 0.0
    for inputs, targets in data.batches(batch_size):
        probs, _ = run_forward(model, inputs)
        loss, _ = weighted_cce(probs, targets, weights)
        loss_sum += loss * inputs.shape[0]
        correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(targets, axis=1)))
        total += inputs.shape[0]
    if total == 0:
        return 0.0, 0.0
    return loss_sum / total, correct / total


def train(model, train_data, val_data, cfg, progress=None):
    """Run the full training loop; returns (trained model, history).

    Shuffled mini-batches, optional augmentation, class-weighted CCE,
    Adam, and dropout, for cfg.epochs epochs.  Frozen layers are never
    updated and the backward walk stops above them.  Per-epoch history
    records the running train loss/accuracy seen during updates and an
    inference-mode pass over the validation split.  A non-finite loss or
    gradient aborts with the epoch and batch coordinates.
    """
    if model.config.layers[-1].kind != "softmax":
        raise ShapeError("training requires a softmax head; the sigmoid head is "
                         "inference-only")
    if model.config.num_classes != train_data.num_classes:
        raise ClassMismatchError(
            "model emits %d classes but the training data has %d"
            % (model.config.num_classes, train_data.num_classes)
        )
    if cfg.class_weights is not None:
        weights = np.asarray(cfg.class_weights, dtype=np.float64)
        if weights.shape != (model.config.num_classes,):
            raise ClassMismatchError("class_weights length %d does not match %d classes"
                                     % (weights.size, model.config.num_classes))
    else:
        weights = balanced_class_weights(np.maximum(train_data.class_counts(), 1))
    if cfg.freeze_fraction is not None:
        model = freeze_layers(model, cfg.freeze_fraction)
    lowest = lowest_trainable_index(model)
    opt = init_adam(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                    epsilon=cfg.epsilon)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        dropout_rng = np.random.default_rng((cfg.seed, epoch, 1))
        seen = 0
        correct = 0
        loss_sum = 0.0
        batches = train_data.batches(cfg.batch_size, shuffle_seed=(cfg.seed, epoch),
                                     augment_ranges=cfg.augment)
        for bi, (inputs, targets) in enumerate(batches):
            probs, caches = run_forward(model, inputs, training=True,
                                        dropout_rng=dropout_rng, with_cache=True)
            loss, dlogits = weighted_cce(probs, targets, weights)
            if not np.isfinite(loss):
                raise TrainingDiverged("loss became non-finite", epoch=epoch, batch=bi)
            if lowest is not None:
                grads = run_backward(model, caches, dlogits, lowest=lowest)
                try:
                    new_params, opt = adam_step(model.params, grads, opt)
                except NumericsError as exc:
                    raise TrainingDiverged(str(exc), epoch=epoch, batch=bi) from exc
                model = replace(model, params=new_params)
            loss_sum += loss * inputs.shape[0]
            correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(targets, axis=1)))
            seen += inputs.shape[0]
        val_loss, val_acc = _evaluate(model, val_data, weights)
        history.train_loss.append(loss_sum / seen)
        history.train_acc.append(correct / seen)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if progress is not None:
            progress(epoch, history)
    return model, history
