import math

import numpy as np
import pytest

from lesioncnn.architecture import ArchConfig, LayerSpec
from lesioncnn.data import ArrayDataset, ClassCatalog, synth_dataset
from lesioncnn.exceptions import (
    ClassMismatchError,
    NumericsError,
    ShapeError,
    TrainingDiverged,
)
from lesioncnn.model import init_params
from lesioncnn.nn.engine import softmax_columns
from lesioncnn.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    init_adam,
    train,
    weighted_cce,
)


def tiny_config(num_classes=2, side=16, dropout=0.0):
    layers = [
        LayerSpec("conv", kernel=(3, 3), out_channels=8),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", kernel=(3, 3), out_channels=16),
        LayerSpec("relu"),
        LayerSpec("globalpool"),
        LayerSpec("dense", units=32),
        LayerSpec("relu"),
    ]
    if dropout > 0:
        layers.append(LayerSpec("dropout", rate=dropout))
    layers += [LayerSpec("dense", units=num_classes), LayerSpec("softmax")]
    return ArchConfig(input_shape=(3, side, side), layers=tuple(layers),
                      num_classes=num_classes)


def tiny_dataset(n_per_class=10, classes=2, side=16, seed=0):
    pixels, labels = synth_dataset(n_per_class, classes=classes, side=side, seed=seed)
    return ArrayDataset(pixels, labels, ClassCatalog.subset(classes))


class TestWeightedCce:
    def test_half_half_is_log_two(self):
        loss, _ = weighted_cce(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]),
                               np.ones(2))
        assert loss == pytest.approx(0.6931471805599453, rel=1e-12)

    def test_perfect_prediction_hits_clip_floor(self):
        loss, _ = weighted_cce(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]),
                               np.ones(2))
        assert loss == pytest.approx(-math.log(1.0 - 1e-7), rel=1e-12)
        assert 0 < loss < 1.1e-7

    def test_doubling_weight_doubles_contribution(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((6, 3))
        probs = softmax_columns(logits.T).T
        targets = np.zeros((6, 3))
        targets[:, 0] = 1.0
        base, _ = weighted_cce(probs, targets, np.array([1.0, 1.0, 1.0]))
        double, _ = weighted_cce(probs, targets, np.array([2.0, 1.0, 1.0]))
        assert double == pytest.approx(2 * base, rel=1e-12)

    def test_unit_weights_equal_plain_cce(self):
        rng = np.random.default_rng(1)
        probs = softmax_columns(rng.standard_normal((4, 8))).T
        labels = rng.integers(0, 4, size=8)
        targets = np.eye(4)[labels]
        loss, _ = weighted_cce(probs, targets, np.ones(4))
        plain = -np.mean(np.log(probs[np.arange(8), labels]))
        assert loss == pytest.approx(plain, rel=1e-12)

    def test_batch_permutation_invariance(self):
        rng = np.random.default_rng(2)
        probs = softmax_columns(rng.standard_normal((5, 12))).T
        labels = rng.integers(0, 5, size=12)
        targets = np.eye(5)[labels]
        weights = rng.uniform(0.5, 2.0, size=5)
        loss, _ = weighted_cce(probs, targets, weights)
        perm = rng.permutation(12)
        loss_p, _ = weighted_cce(probs[perm], targets[perm], weights)
        assert loss_p == pytest.approx(loss, rel=1e-12)

    def test_fused_gradient_matches_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            logits = rng.standard_normal((5, 7))
            labels = rng.integers(0, 7, size=5)
            targets = np.eye(7)[labels]
            weights = rng.uniform(0.5, 3.0, size=7)

            def loss_of(z):
                p = softmax_columns(z.T).T
                value, _ = weighted_cce(p, targets, weights)
                return value

            probs = softmax_columns(logits.T).T
            _, dlogits = weighted_cce(probs, targets, weights)
            eps = 1e-6
            for _ in range(6):
                i = rng.integers(0, 5)
                j = rng.integers(0, 7)
                bump = np.zeros_like(logits)
                bump[i, j] = eps
                numeric = (loss_of(logits + bump) - loss_of(logits - bump)) / (2 * eps)
                assert abs(numeric - dlogits[i, j]) <= 1e-6 * max(1.0, abs(numeric))

    def test_rejects_bad_targets(self):
        probs = np.array([[0.5, 0.5]])
        with pytest.raises(ShapeError):
            weighted_cce(probs, np.array([[0.5, 0.5]]), np.ones(2))
        with pytest.raises(ShapeError):
            weighted_cce(probs, np.array([[1.0, 1.0]]), np.ones(2))
        with pytest.raises(ShapeError):
            weighted_cce(probs, np.array([[1.0, 0.0, 0.0]]), np.ones(3))
        with pytest.raises(ShapeError):
            weighted_cce(probs, np.array([[1.0, 0.0]]), np.ones(3))


def single_param_state(theta):
    return (np.array([theta], dtype=np.float64),)


class TestAdamStep:
    def test_single_step_hand_value(self):
        params = ((np.zeros(1),),)
        grads = ((np.ones(1),),)
        state = init_adam(params)
        new_params, new_state = adam_step(params, grads, state)
        assert new_state.t == 1
        assert new_params[0][0][0] == pytest.approx(-0.0009999999900000001, rel=1e-12)
        assert abs(new_params[0][0][0] + 0.001) < 1e-8

    def test_two_steps_of_unit_gradient(self):
        params = ((np.zeros(1),),)
        grads = ((np.ones(1),),)
        state = init_adam(params)
        params, state = adam_step(params, grads, state)
        params, state = adam_step(params, grads, state)
        # bias correction keeps each unit-gradient step at lr/(1+eps)
        assert params[0][0][0] == pytest.approx(-2 * 0.0009999999900000001, rel=1e-12)

    def test_zero_gradient_no_move(self):
        params = ((np.array([1.5, -2.0]),),)
        grads = ((np.zeros(2),),)
        new_params, _ = adam_step(params, grads, init_adam(params))
        assert np.array_equal(new_params[0][0], params[0][0])

    def test_zero_lr_no_move(self):
        rng = np.random.default_rng(3)
        params = ((rng.standard_normal(4),),)
        grads = ((rng.standard_normal(4),),)
        new_params, _ = adam_step(params, grads, init_adam(params, lr=0.0))
        assert np.array_equal(new_params[0][0], params[0][0])

    def test_first_step_direction_is_signed_lr(self):
        rng = np.random.default_rng(4)
        g = rng.standard_normal(64)
        params = ((np.zeros(64),),)
        new_params, _ = adam_step(params, ((g,),), init_adam(params))
        step = new_params[0][0]
        assert np.allclose(step, -np.sign(g) * 0.001, atol=1e-6)

    def test_purity_and_no_mutation(self):
        rng = np.random.default_rng(5)
        theta = rng.standard_normal(3)
        g = rng.standard_normal(3)
        params = ((theta.copy(),),)
        grads = ((g.copy(),),)
        state = init_adam(params)
        a_params, a_state = adam_step(params, grads, state)
        b_params, b_state = adam_step(params, grads, state)
        assert np.array_equal(a_params[0][0], b_params[0][0])
        assert np.array_equal(a_state.m[0][0], b_state.m[0][0])
        assert np.array_equal(params[0][0], theta)
        assert np.array_equal(grads[0][0], g)
        assert state.t == 0

    def test_none_gradients_pass_through(self):
        params = ((np.ones(2),), (np.full(2, 7.0),))
        grads = ((np.ones(2),), None)
        new_params, new_state = adam_step(params, grads, init_adam(params))
        assert np.array_equal(new_params[1][0], params[1][0])
        assert np.all(new_state.m[1][0] == 0)

    def test_non_finite_gradient_rejected(self):
        params = ((np.zeros(2),),)
        grads = ((np.array([1.0, np.nan]),),)
        with pytest.raises(NumericsError):
            adam_step(params, grads, init_adam(params))


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 50
        assert cfg.batch_size == 32
        assert cfg.lr == 0.001
        assert cfg.dropout_rate == 0.5

    def test_validation(self):
        with pytest.raises(ShapeError):
            TrainConfig(epochs=0)
        with pytest.raises(ShapeError):
            TrainConfig(dropout_rate=1.0)
        with pytest.raises(ShapeError):
            TrainConfig(batch_size=0)


class TestTrainHistory:
    def test_csv_layout(self, tmp_path):
        history = TrainHistory(
            train_loss=[0.69314718, 0.25],
            train_acc=[0.5, 0.875],
            val_loss=[0.7, 0.3],
            val_acc=[0.5, 0.75],
        )
        path = tmp_path / "history.csv"
        history.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        assert lines[1] == "1,0.693147,0.5,0.7,0.5"
        assert lines[2] == "2,0.25,0.875,0.3,0.75"


class NanData:
    """Minimal dataset stub whose tensors are non-finite."""

    num_classes = 2
    dtype = np.float32

    def __len__(self):
        return 2

    def class_counts(self):
        return np.array([1, 1])

    def batches(self, batch_size, shuffle_seed=None, augment_ranges=None):
        inputs = np.full((2, 3, 16, 16), np.nan, dtype=np.float32)
        targets = np.eye(2, dtype=np.float32)
        yield inputs, targets


class TestTrain:
    def test_deterministic_history_and_params(self):
        data = tiny_dataset()
        val = tiny_dataset(n_per_class=4, seed=9)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=5)
        model_a, hist_a = train(init_params(tiny_config(), 1), data, val, cfg)
        model_b, hist_b = train(init_params(tiny_config(), 1), data, val, cfg)
        assert hist_a == hist_b
        for (wa, ba), (wb, bb) in zip(model_a.params, model_b.params):
            assert np.array_equal(wa, wb) and np.array_equal(ba, bb)

    def test_history_one_row_per_epoch(self):
        data = tiny_dataset(n_per_class=4)
        _, history = train(init_params(tiny_config(), 0), data, data,
                           TrainConfig(epochs=4, batch_size=4))
        assert len(history) == 4
        assert len(history.val_acc) == 4

    def test_full_freeze_leaves_params_bitwise(self):
        data = tiny_dataset(n_per_class=4)
        model = init_params(tiny_config(), 2)
        trained, _ = train(model, data, data,
                           TrainConfig(epochs=2, batch_size=4, freeze_fraction=1.0))
        for (w0, b0), (w1, b1) in zip(model.params, trained.params):
            assert np.array_equal(w0, w1) and np.array_equal(b0, b1)

    def test_frozen_prefix_fixed_unfrozen_move(self):
        data = tiny_dataset(n_per_class=4)
        model = init_params(tiny_config(), 2)
        trained, _ = train(model, data, data,
                           TrainConfig(epochs=2, batch_size=4, freeze_fraction=0.5))
        assert trained.frozen == (True, True, False, False)
        for pi in (0, 1):
            assert np.array_equal(model.params[pi][0], trained.params[pi][0])
        assert not np.array_equal(model.params[3][0], trained.params[3][0])

    def test_learnability_small_run(self):
        data = tiny_dataset(n_per_class=12, seed=3)
        cfg = TrainConfig(epochs=50, batch_size=8, seed=0, lr=3e-3)
        _, history = train(init_params(tiny_config(), 0), data, data, cfg)
        assert history.train_acc[-1] >= 0.9
        assert history.train_loss[-1] < history.train_loss[0]

    def test_class_mismatch_rejected(self):
        data = tiny_dataset()
        with pytest.raises(ClassMismatchError):
            train(init_params(tiny_config(num_classes=3), 0), data, data,
                  TrainConfig(epochs=1))

    def test_wrong_weight_length_rejected(self):
        data = tiny_dataset()
        with pytest.raises(ClassMismatchError):
            train(init_params(tiny_config(), 0), data, data,
                  TrainConfig(epochs=1, class_weights=(1.0, 1.0, 1.0)))

    def test_sigmoid_head_rejected(self):
        config = ArchConfig(
            input_shape=(3, 16, 16),
            layers=(
                LayerSpec("globalpool"),
                LayerSpec("dense", units=2),
                LayerSpec("sigmoid"),
            ),
            num_classes=2,
        )
        data = tiny_dataset()
        with pytest.raises(ShapeError):
            train(init_params(config, 0), data, data, TrainConfig(epochs=1))

    def test_non_finite_loss_reports_coordinates(self):
        with pytest.raises(TrainingDiverged) as err:
            train(init_params(tiny_config(), 0), NanData(), NanData(),
                  TrainConfig(epochs=1, batch_size=2))
        assert err.value.epoch == 0
        assert err.value.batch == 0

    def test_dropout_config_trains(self):
        data = tiny_dataset(n_per_class=6)
        model = init_params(tiny_config(dropout=0.5), 4)
        trained, history = train(model, data, data,
                                 TrainConfig(epochs=2, batch_size=6, seed=1))
        assert len(history) == 2
        assert not np.array_equal(model.params[0][0], trained.params[0][0])
