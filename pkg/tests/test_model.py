import numpy as np
import pytest

from lesioncnn.architecture import ArchConfig, LayerSpec, reference_cnn_config
from lesioncnn.checkpoint import load_checkpoint, save_checkpoint
from lesioncnn.data import ClassCatalog
from lesioncnn.exceptions import CheckpointError, ShapeError
from lesioncnn.model import (
    ModelState,
    freeze_layers,
    init_params,
    lowest_trainable_index,
    param_shapes,
    predict_proba,
    replace_head,
    run_backward,
    run_forward,
)
from lesioncnn import nn


def small_config(num_classes=3, dropout=0.0, head="softmax"):
    layers = [
        LayerSpec("conv", kernel=(3, 3), out_channels=4),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", kernel=(3, 3), out_channels=6),
        LayerSpec("relu"),
        LayerSpec("globalpool"),
        LayerSpec("dense", units=8),
        LayerSpec("relu"),
    ]
    if dropout > 0:
        layers.append(LayerSpec("dropout", rate=dropout))
    layers.append(LayerSpec("dense", units=num_classes))
    if head:
        layers.append(LayerSpec(head))
    return ArchConfig(input_shape=(3, 12, 12), layers=tuple(layers),
                      num_classes=num_classes)


def dense_chain_config(count=10, num_classes=2):
    layers = [LayerSpec("globalpool")]
    for _ in range(count - 1):
        layers.append(LayerSpec("dense", units=5))
        layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("dense", units=num_classes))
    layers.append(LayerSpec("softmax"))
    return ArchConfig(input_shape=(3, 4, 4), layers=tuple(layers),
                      num_classes=num_classes)


def batch(seed, n=4, shape=(3, 12, 12), dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n,) + shape).astype(dtype)


class TestParamShapes:
    def test_reference_config_shapes(self):
        shapes = param_shapes(reference_cnn_config(64, num_classes=7))
        assert shapes[0] == ((32, 3, 3, 3), (32,))
        assert shapes[5] == ((256, 256, 5, 5), (256,))
        assert shapes[6] == ((4096, 256), (4096,))
        assert shapes[7] == ((7, 4096), (7,))


class TestInitParams:
    def test_deterministic(self):
        a = init_params(small_config(), seed=3)
        b = init_params(small_config(), seed=3)
        for (wa, ba), (wb, bb) in zip(a.params, b.params):
            assert np.array_equal(wa, wb) and np.array_equal(ba, bb)

    def test_seed_changes_weights(self):
        a = init_params(small_config(), seed=0)
        b = init_params(small_config(), seed=1)
        assert not np.array_equal(a.params[0][0], b.params[0][0])

    def test_biases_zero(self):
        model = init_params(small_config(), seed=5)
        for _, bias in model.params:
            assert np.all(bias == 0)

    def test_he_variance(self):
        config = ArchConfig(
            input_shape=(3, 4, 4),
            layers=(
                LayerSpec("globalpool"),
                LayerSpec("dense", units=4000),
                LayerSpec("relu"),
                LayerSpec("dense", units=2),
                LayerSpec("softmax"),
            ),
            num_classes=2,
        )
        model = init_params(config, seed=0)
        weights = model.params[0][0]  # 4000 x 3, fan_in 3
        target = 2.0 / 3.0
        assert target / 3 < weights.var() < target * 3

    def test_shapes_validated(self):
        model = init_params(small_config(), seed=0)
        bad = (model.params[0],) + model.params[:-1]
        with pytest.raises(ShapeError):
            ModelState(config=model.config, params=bad, frozen=model.frozen,
                       init_seed=0, classes=model.classes)


class TestRunForward:
    def test_matches_per_sample_ops(self):
        model = init_params(small_config(), seed=7, dtype=np.float64)
        x = batch(0, n=3)
        out, _ = run_forward(model, x)
        for i in range(3):
            a = nn.conv2d(x[i], *model.params[0])
            a = nn.relu(a)
            a, _ = nn.maxpool2d(a)
            a = nn.conv2d(a, *model.params[1])
            a = nn.relu(a)
            a = nn.global_pool(a)
            a = nn.dense(a, *model.params[2])
            a = nn.relu(a)
            a = nn.dense(a, *model.params[3])
            a = nn.softmax(a)
            assert np.allclose(out[i], a, atol=1e-12)

    def test_rows_sum_to_one(self):
        model = init_params(small_config(), seed=1, dtype=np.float64)
        out, _ = run_forward(model, batch(2, n=5))
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_sigmoid_head(self):
        model = init_params(small_config(head="sigmoid"), seed=1, dtype=np.float64)
        out, _ = run_forward(model, batch(2, n=2))
        assert np.all((out > 0) & (out < 1))

    def test_dropout_training_vs_inference(self):
        model = init_params(small_config(dropout=0.5), seed=2, dtype=np.float64)
        x = batch(3, n=2)
        plain, _ = run_forward(model, x)
        again, _ = run_forward(model, x)
        assert np.array_equal(plain, again)
        dropped, _ = run_forward(model, x, training=True,
                                 dropout_rng=np.random.default_rng(0))
        assert not np.array_equal(plain, dropped)

    def test_training_requires_rng(self):
        model = init_params(small_config(dropout=0.5), seed=2)
        with pytest.raises(ShapeError):
            run_forward(model, batch(0, n=1, dtype=np.float32), training=True)


class TestRunBackward:
    def test_matches_finite_differences(self):
        config = small_config(head=None)
        model = init_params(config, seed=11, dtype=np.float64)
        x = batch(4, n=2)
        rng = np.random.default_rng(9)
        direction = rng.standard_normal((2, config.num_classes))

        def loss(m):
            out, _ = run_forward(m, x)
            return float((out * direction).sum())

        out, caches = run_forward(model, x, with_cache=True)
        grads = run_backward(model, caches, direction)
        eps = 1e-6
        for pi in range(len(model.params)):
            for ti in range(2):  # weights then bias
                tensor = model.params[pi][ti]
                flat_coords = rng.choice(tensor.size, size=min(4, tensor.size),
                                         replace=False)
                for fc in flat_coords:
                    coord = np.unravel_index(fc, tensor.shape)
                    params = [list(p) for p in model.params]
                    bumped = tensor.copy()
                    bumped[coord] += eps
                    params[pi][ti] = bumped
                    plus = loss(ModelState(config=config,
                                           params=tuple(tuple(p) for p in params),
                                           frozen=model.frozen, init_seed=0,
                                           classes=model.classes))
                    bumped = tensor.copy()
                    bumped[coord] -= eps
                    params[pi][ti] = bumped
                    minus = loss(ModelState(config=config,
                                            params=tuple(tuple(p) for p in params),
                                            frozen=model.frozen, init_seed=0,
                                            classes=model.classes))
                    numeric = (plus - minus) / (2 * eps)
                    analytic = grads[pi][ti][coord]
                    assert abs(analytic - numeric) <= 1e-5 * max(
                        1.0, abs(analytic), abs(numeric)
                    )

    def test_frozen_prefix_skips_lower_grads(self):
        model = init_params(small_config(head=None), seed=0, dtype=np.float64)
        x = batch(5, n=2)
        dlogits = np.random.default_rng(1).standard_normal((2, 3))
        _, caches = run_forward(model, x, with_cache=True)
        full = run_backward(model, caches, dlogits)
        partial = run_backward(model, caches, dlogits, lowest=2)
        assert partial[0] is None and partial[1] is None
        for pi in (2, 3):
            assert np.allclose(partial[pi][0], full[pi][0], atol=1e-12)
            assert np.allclose(partial[pi][1], full[pi][1], atol=1e-12)

    def test_fully_frozen_returns_no_grads(self):
        model = init_params(small_config(head=None), seed=0)
        assert run_backward(model, None, None, lowest=None) == [None] * 4


class TestFreezeLayers:
    def test_seventy_percent_of_ten(self):
        model = init_params(dense_chain_config(10), seed=0)
        frozen = freeze_layers(model, 0.7).frozen
        assert frozen == (True,) * 7 + (False,) * 3

    def test_zero_and_full(self):
        model = init_params(dense_chain_config(4), seed=0)
        assert freeze_layers(model, 0.0).frozen == (False,) * 4
        assert freeze_layers(model, 1.0).frozen == (True,) * 4

    def test_values_untouched(self):
        model = init_params(small_config(), seed=3)
        frozen = freeze_layers(model, 0.5)
        for (w0, b0), (w1, b1) in zip(model.params, frozen.params):
            assert np.array_equal(w0, w1) and np.array_equal(b0, b1)

    def test_lowest_trainable(self):
        model = init_params(dense_chain_config(4), seed=0)
        assert lowest_trainable_index(freeze_layers(model, 0.5)) == 2
        assert lowest_trainable_index(freeze_layers(model, 1.0)) is None

    def test_bad_fraction(self):
        model = init_params(small_config(), seed=0)
        with pytest.raises(ShapeError):
            freeze_layers(model, 1.5)


class TestReplaceHead:
    def test_transfers_all_but_head(self):
        model = init_params(small_config(num_classes=7), seed=4)
        surg = replace_head(model, 3, seed=99)
        assert surg.config.num_classes == 3
        assert len(surg.classes) == 3
        for (w0, b0), (w1, b1) in zip(model.params[:-1], surg.params[:-1]):
            assert np.array_equal(w0, w1) and np.array_equal(b0, b1)
        assert surg.params[-1][0].shape == (3, 8)
        fresh = init_params(surg.config, seed=99)
        assert np.array_equal(surg.params[-1][0], fresh.params[-1][0])


class TestPredict:
    def test_batching_invariance(self):
        model = init_params(small_config(), seed=6, dtype=np.float64)
        x = batch(7, n=10)
        a = predict_proba(model, x, batch_size=64)
        b = predict_proba(model, x, batch_size=3)
        assert np.allclose(a, b, atol=1e-10)

    def test_empty_input(self):
        model = init_params(small_config(), seed=6)
        out = predict_proba(model, np.zeros((0, 3, 12, 12), dtype=np.float32))
        assert out.shape == (0, 3)


class TestCheckpoint:
    def test_round_trip_bit_exact_forward(self, tmp_path):
        model = freeze_layers(init_params(small_config(), seed=8), 0.5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.frozen == model.frozen
        assert loaded.init_seed == model.init_seed
        assert loaded.classes.codes == model.classes.codes
        x = batch(9, n=3, dtype=np.float32)
        out_a, _ = run_forward(model, x)
        out_b, _ = run_forward(loaded, x)
        assert np.array_equal(out_a, out_b)

    def test_save_is_deterministic(self, tmp_path):
        model = init_params(small_config(), seed=8)
        save_checkpoint(model, tmp_path / "a.ckpt")
        save_checkpoint(model, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        model = init_params(small_config(), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path)
        assert "magic" in str(err.value)

    def test_truncated_payload_rejected(self, tmp_path):
        model = init_params(small_config(), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path)
        assert "truncated" in str(err.value)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = init_params(small_config(), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_header_shape_tamper_rejected(self, tmp_path):
        import json
        import struct

        model = init_params(small_config(), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes()
        (hlen,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12:12 + hlen])
        header["tensors"][0]["weights"] = [1, 1, 1, 1]
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        path.write_bytes(data[:8] + struct.pack("<I", len(blob)) + blob + data[12 + hlen:])
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path)
        assert "shape" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")
