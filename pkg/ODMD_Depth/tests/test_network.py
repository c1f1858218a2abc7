"""DBox network: shapes, normalization, exact gradients and prediction contracts."""

import numpy as np
import pytest

from odmd_app.errors import CompatibilityError, ContractError, DegenerateGeometry
from odmd_app.generator import generate_batch
from odmd_app.geometry import ObservationSet
from odmd_app.network import (FEATURES, NetworkParams, backward, forward, init_params, loss, normalize,
                              normalize_batch, predict_batch, predict_depth, tensor_names)


def _randomized(params, seed):
    """Same shapes with every tensor (peepholes and biases included) drawn at random"""
    rng = np.random.default_rng(seed)
    return params.like({k: rng.normal(0.0, 0.5, v.shape) for k, v in params.tensors.items()})


def _numeric_gradient(params, batch, name, flat_index, eps=1e-6):
    plus = {k: v.copy() for k, v in params.tensors.items()}
    minus = {k: v.copy() for k, v in params.tensors.items()}
    plus[name].flat[flat_index] += eps
    minus[name].flat[flat_index] -= eps
    return (loss(params.like(plus), batch).loss - loss(params.like(minus), batch).loss) / (2 * eps)


class TestParams:
    def test_tensor_shapes(self):
        params = init_params(10, hidden_size=8, fc_width=16, fc_layers=3)
        assert list(params.tensors) == tensor_names(3)
        assert params["lstm.W_x"].shape == (FEATURES, 32)
        assert params["fc0.W"].shape == (8 + 70, 16)
        assert params["fc2.W"].shape == (16 + 70, 16)
        assert params["out.W"].shape == (16, 1)
        assert params.dtype == np.float32

    def test_init_is_deterministic_and_forget_bias_is_one(self):
        a = init_params(5, seed=3, hidden_size=4, fc_width=6, fc_layers=2)
        b = init_params(5, seed=3, hidden_size=4, fc_width=6, fc_layers=2)
        for name in a.tensors:
            np.testing.assert_array_equal(a[name], b[name])
        np.testing.assert_array_equal(a["lstm.b"][4:8], 1.0)
        np.testing.assert_array_equal(a["lstm.b"][:4], 0.0)
        assert not np.array_equal(a["lstm.W_x"], init_params(5, seed=4, hidden_size=4, fc_width=6,
                                                             fc_layers=2)["lstm.W_x"])

    def test_shape_mismatch_is_contract_error(self, tiny_params):
        tensors = dict(tiny_params.tensors)
        tensors["out.W"] = np.zeros((3, 1))
        with pytest.raises(ContractError):
            tiny_params.like(tensors)

    def test_forward_rejects_wrong_input_shape(self, tiny_params):
        with pytest.raises(ContractError):
            forward(tiny_params, np.zeros((2, 5, FEATURES)))


class TestNormalization:
    def test_rel_features(self, K, small_cfg):
        batch = generate_batch(small_cfg, 20, 1, threads=1)
        norm = normalize_batch(batch.boxes, batch.positions, K, "rel", labels=batch.labels, dtype=np.float64)
        span = np.linalg.norm(batch.positions[:, -1] - batch.positions[:, 0], axis=1)
        np.testing.assert_allclose(norm.scale, span)
        np.testing.assert_array_equal(norm.inputs[:, 0, 4:], 0.0)
        # relative motions sum to the unit-length overall displacement
        np.testing.assert_allclose(np.linalg.norm(norm.inputs[:, :, 4:].sum(axis=1), axis=1), 1.0)
        np.testing.assert_allclose(norm.targets * norm.scale, batch.labels)
        np.testing.assert_allclose(norm.inputs[:, :, 2] * K.image_width, batch.boxes[:, :, 2])

    def test_abs_features_relative_to_final_position(self, K, small_cfg):
        batch = generate_batch(small_cfg, 5, 1, threads=1)
        norm = normalize_batch(batch.boxes, batch.positions + 10.0, K, "abs", dtype=np.float64)
        np.testing.assert_allclose(norm.inputs[:, :, 4:], batch.positions - batch.positions[:, -1:])
        np.testing.assert_array_equal(norm.scale, 1.0)

    def test_degenerate_range(self, K):
        obs = ObservationSet.from_arrays(np.array([[320, 240, 20, 20], [320, 240, 20, 20]]), np.zeros((2, 3)))
        with pytest.raises(DegenerateGeometry):
            normalize(obs, K, "rel")
        assert normalize(obs, K, "abs").scale == 1.0

    def test_zero_lateral(self, K, small_cfg):
        batch = generate_batch(small_cfg, 5, 1, threads=1)
        norm = normalize_batch(batch.boxes, batch.positions, K, "abs", zero_lateral=True)
        np.testing.assert_array_equal(norm.inputs[:, :, 4:6], 0.0)


class TestGradients:
    @pytest.mark.parametrize("mode", ["rel", "abs"])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, K, small_cfg, mode, seed):
        params = _randomized(init_params(4, mode, seed=seed, hidden_size=3, fc_width=5, fc_layers=2,
                                         dtype=np.float64), seed)
        examples = generate_batch(small_cfg, 6, 100 + seed, threads=1)
        batch = normalize_batch(examples.boxes, examples.positions, K, mode, labels=examples.labels,
                                dtype=np.float64)
        result, grads = backward(params, batch)
        assert result.loss == pytest.approx(loss(params, batch).loss, rel=1e-12)
        rng = np.random.default_rng(seed)
        for name, value in params.tensors.items():
            picks = rng.choice(value.size, size=min(4, value.size), replace=False)
            numeric = np.array([_numeric_gradient(params, batch, name, i) for i in picks])
            analytic = grads[name].ravel()[picks]
            scale = np.linalg.norm(numeric) + np.linalg.norm(analytic)
            if scale < 1e-9:
                continue
            assert np.linalg.norm(numeric - analytic) <= 1e-4 * scale + 1e-5, name

    def test_gradient_shapes(self, tiny_params, K, small_cfg):
        examples = generate_batch(small_cfg, 3, 1, threads=1)
        batch = normalize_batch(examples.boxes, examples.positions, K, "rel", labels=examples.labels,
                                dtype=np.float64)
        _, grads = backward(tiny_params, batch)
        assert {k: v.shape for k, v in grads.items()} == {k: v.shape for k, v in tiny_params.tensors.items()}


class TestPrediction:
    def test_all_steps_last_column_is_final_output(self, tiny_params, K, small_cfg):
        examples = generate_batch(small_cfg, 4, 1, threads=1)
        inputs = normalize_batch(examples.boxes, examples.positions, K, "rel", dtype=np.float64).inputs
        every = forward(tiny_params, inputs)
        assert every.shape == (4, 4)
        np.testing.assert_array_equal(every[:, -1], forward(tiny_params, inputs, all_steps=False))

    def test_rel_scale_invariance(self, K, clean_cfg):
        params = _randomized(init_params(10, "rel", seed=1, hidden_size=8, fc_width=16, fc_layers=2), 1)
        params = params.astype(np.float32)
        examples = generate_batch(clean_cfg, 1000, 77, threads=1)
        base = normalize_batch(examples.boxes, examples.positions, K, "rel")
        f_base = forward(params, base.inputs, all_steps=False)
        depth_base, _ = predict_batch(params, examples.boxes, examples.positions, K)
        for s in (0.1, 3.0, 42.0):
            scaled = normalize_batch(examples.boxes, examples.positions * s, K, "rel")
            np.testing.assert_array_equal(forward(params, scaled.inputs, all_steps=False), f_base)
            depth, ok = predict_batch(params, examples.boxes, examples.positions * s, K)
            assert np.all(ok)
            np.testing.assert_allclose(depth, depth_base * s, rtol=1e-12)

    def test_single_prediction_matches_batch(self, tiny_params, K, small_cfg):
        examples = generate_batch(small_cfg, 3, 1, threads=1)
        depth, _ = predict_batch(tiny_params, examples.boxes, examples.positions, K)
        assert predict_depth(tiny_params, examples[1].obs, K) == pytest.approx(depth[1], rel=1e-12)

    def test_n_mismatch(self, tiny_params, K, clean_cfg):
        examples = generate_batch(clean_cfg, 2, 1, threads=1)
        with pytest.raises(CompatibilityError):
            predict_batch(tiny_params, examples.boxes, examples.positions, K)
        with pytest.raises(CompatibilityError):
            predict_depth(tiny_params, examples[0].obs, K)

    def test_mode_mismatch(self, tiny_params, K, small_cfg):
        example = generate_batch(small_cfg, 1, 1, threads=1)[0]
        with pytest.raises(CompatibilityError):
            predict_depth(tiny_params, example.obs, K, mode="abs")

    def test_abs_translation_invariance(self, K, small_cfg):
        params = _randomized(init_params(4, "abs", seed=2, hidden_size=3, fc_width=5, fc_layers=2,
                                         dtype=np.float64), 2)
        examples = generate_batch(small_cfg, 10, 4, threads=1)
        a, _ = predict_batch(params, examples.boxes, examples.positions, K)
        b, _ = predict_batch(params, examples.boxes, examples.positions + np.array([0.5, -0.25, 2.0]), K)
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_params_type(self, tiny_params):
        assert isinstance(tiny_params, NetworkParams)
        assert tiny_params.count() == sum(v.size for v in tiny_params.tensors.values())
