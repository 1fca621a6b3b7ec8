import numpy as np
import pytest

from ticketforge.network import (
    Conv2d,
    Dense,
    Flatten,
    InvalidNetworkError,
    MaxPool,
    NetworkSpec,
    NumericalOverflowError,
    Parameters,
    ReLU,
    ShapeMismatchError,
    forward,
    init_kaiming_uniform,
    load_checkpoint,
    save_checkpoint,
)
from ticketforge.pruning import MaskSet
from ticketforge.rng import RngState

from conftest import conv_bruteforce, seeded_params


class TestSpecValidation:
    def test_shapes_must_compose(self):
        with pytest.raises(InvalidNetworkError):
            NetworkSpec((Dense(2, 4), Dense(5, 3)), (2,), 3)

    def test_output_must_be_class_logits(self):
        with pytest.raises(InvalidNetworkError):
            NetworkSpec((Dense(2, 4),), (2,), 3)

    def test_needs_parameterized_layer(self):
        with pytest.raises(InvalidNetworkError):
            NetworkSpec((ReLU(),), (2,), 2)

    def test_num_classes_minimum(self):
        with pytest.raises(InvalidNetworkError):
            NetworkSpec((Dense(2, 1),), (2,), 1)

    def test_pool_window_must_tile(self):
        with pytest.raises(InvalidNetworkError):
            NetworkSpec(
                (Conv2d(1, 2, (3, 3)), MaxPool(3), Flatten(), Dense(2, 2)),
                (1, 7, 7),
                2,
            )

    def test_conv_shape_chain(self, tiny_cnn_spec):
        # (1,6,6) -conv3-> (2,4,4) -pool2-> (2,2,2) -flatten-> 8 -> 3
        assert tiny_cnn_spec.weight_shapes() == [(2, 1, 3, 3), (3, 8)]
        assert tiny_cnn_spec.bias_shapes() == [(2,), (3,)]
        assert tiny_cnn_spec.fan_ins() == [9, 8]

    def test_parameter_count(self, tiny_mlp_spec):
        # 2*6 + 6 + 6*3 + 3
        assert tiny_mlp_spec.total_parameter_count() == 39

    def test_dict_roundtrip(self, tiny_cnn_spec):
        clone = NetworkSpec.from_dict(tiny_cnn_spec.to_dict())
        assert clone == tiny_cnn_spec


class TestKaimingUniformInit:
    def test_dense_bound_fan_in_100(self):
        """sqrt(6 / (6 * 100)) = 0.1 exactly."""
        spec = NetworkSpec((Dense(100, 50), ReLU(), Dense(50, 2)), (100,), 2)
        params = init_kaiming_uniform(spec, RngState(0))
        w = params.weights[0]
        assert np.abs(w).max() <= 0.1
        assert np.abs(w).max() > 0.09  # draws fill the interval

    def test_bound_fan_in_1(self):
        spec = NetworkSpec((Dense(1, 2000), ReLU(), Dense(2000, 2)), (1,), 2)
        w = init_kaiming_uniform(spec, RngState(1)).weights[0]
        assert np.abs(w).max() <= 1.0
        assert np.abs(w).max() > 0.99

    def test_empirical_distribution_fan_in_25(self):
        """Monte-Carlo check against the uniform bound 1/sqrt(25) = 0.2."""
        spec = NetworkSpec((Dense(25, 4000), ReLU(), Dense(4000, 2)), (25,), 2)
        w = init_kaiming_uniform(spec, RngState(42)).weights[0].ravel()
        assert w.size == 100_000
        assert np.abs(w).max() <= 0.2
        # mean of n uniform draws on [-b, b] has sigma = b / sqrt(3n)
        sigma_mean = 0.2 / np.sqrt(3 * w.size)
        assert abs(w.mean()) < 3 * sigma_mean

    def test_bias_bound_matches_fan_in(self):
        spec = NetworkSpec((Dense(4, 5000), ReLU(), Dense(5000, 2)), (4,), 2)
        b = init_kaiming_uniform(spec, RngState(3)).biases[0]
        assert np.abs(b).max() <= 0.5
        assert np.abs(b).max() > 0.49

    def test_conv_fan_in_is_receptive_field(self, tiny_cnn_spec):
        w = init_kaiming_uniform(tiny_cnn_spec, RngState(4)).weights[0]
        assert np.abs(w).max() <= 1.0 / 3.0  # 1/sqrt(1*3*3)

    def test_deterministic(self, tiny_mlp_spec):
        a = init_kaiming_uniform(tiny_mlp_spec, RngState(9, 2))
        b = init_kaiming_uniform(tiny_mlp_spec, RngState(9, 2))
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)


class TestForward:
    def test_identity_dense_returns_input(self):
        spec = NetworkSpec((Dense(3, 3),), (3,), 3)
        params = Parameters([np.eye(3)], [np.zeros(3)])
        x = np.array([[1.0, -2.0, 0.5], [0.0, 4.0, -1.0]])
        np.testing.assert_array_equal(forward(spec, params, None, x), x)

    def test_all_zero_mask_zero_bias_gives_zero_logits(self, tiny_mlp_spec):
        params = seeded_params(tiny_mlp_spec, 5)
        params.biases = [np.zeros_like(b) for b in params.biases]
        mask = MaskSet([np.zeros_like(w, dtype=np.uint8) for w in params.weights])
        out = forward(tiny_mlp_spec, params, mask, np.ones((4, 2)))
        np.testing.assert_array_equal(out, np.zeros((4, 3)))

    def test_matches_straight_line_matmul_oracle(self, tiny_mlp_spec):
        """Independently coded two-layer forward, within 1e-12 relative."""
        params = seeded_params(tiny_mlp_spec, 6)
        gen = RngState(7).generator()
        x = gen.standard_normal((10, 2))
        h = x @ params.weights[0].T + params.biases[0]
        h = np.maximum(h, 0.0)
        expected = h @ params.weights[1].T + params.biases[1]
        got = forward(tiny_mlp_spec, params, None, x)
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=0)

    def test_conv_matches_nested_loop_oracle(self, tiny_cnn_spec):
        params = seeded_params(tiny_cnn_spec, 8)
        gen = RngState(9).generator()
        x = gen.standard_normal((3, 1, 6, 6))
        conv = conv_bruteforce(x, params.weights[0], params.biases[0], stride=1)
        relu = np.maximum(conv, 0.0)
        # naive 2x2 max pooling
        pooled = np.zeros((3, 2, 2, 2))
        for n in range(3):
            for c in range(2):
                for i in range(2):
                    for j in range(2):
                        pooled[n, c, i, j] = relu[
                            n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2
                        ].max()
        expected = pooled.reshape(3, -1) @ params.weights[1].T + params.biases[1]
        got = forward(tiny_cnn_spec, params, None, x)
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-300)

    def test_strided_conv_matches_oracle(self):
        spec = NetworkSpec(
            (Conv2d(2, 3, (3, 3), stride=2), Flatten(), Dense(27, 2)),
            (2, 7, 7),
            2,
        )
        params = seeded_params(spec, 10)
        x = RngState(11).generator().standard_normal((2, 2, 7, 7))
        conv = conv_bruteforce(x, params.weights[0], params.biases[0], stride=2)
        expected = conv.reshape(2, -1) @ params.weights[1].T + params.biases[1]
        np.testing.assert_allclose(forward(spec, params, None, x), expected, rtol=1e-12)

    def test_masked_weights_are_dropped(self):
        spec = NetworkSpec((Dense(2, 2),), (2,), 2)
        params = Parameters([np.array([[1.0, 1.0], [1.0, 1.0]])], [np.zeros(2)])
        mask = MaskSet([np.array([[1, 0], [0, 1]], dtype=np.uint8)])
        out = forward(spec, params, mask, np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(out, [[2.0, 3.0]])

    def test_batch_shape_mismatch(self, tiny_mlp_spec):
        params = seeded_params(tiny_mlp_spec, 12)
        with pytest.raises(ShapeMismatchError):
            forward(tiny_mlp_spec, params, None, np.ones((4, 3)))

    def test_mask_shape_mismatch(self, tiny_mlp_spec):
        params = seeded_params(tiny_mlp_spec, 13)
        bad = MaskSet([np.ones((1, 1), dtype=np.uint8), np.ones((3, 6), dtype=np.uint8)])
        with pytest.raises(ShapeMismatchError):
            forward(tiny_mlp_spec, params, bad, np.ones((1, 2)))

    def test_overflow_names_layer(self, tiny_mlp_spec):
        params = seeded_params(tiny_mlp_spec, 14)
        params.weights[1][:] = 1e308  # second dense, stack index 2
        x = np.full((1, 2), 1e200)
        with pytest.raises(NumericalOverflowError) as err:
            forward(tiny_mlp_spec, params, None, x)
        assert "dense" in str(err.value)
        assert err.value.layer_index == 2


def test_checkpoint_roundtrip(tmp_path, tiny_cnn_spec):
    params = seeded_params(tiny_cnn_spec, 20)
    mask = MaskSet.full_like(params)
    mask.layers[0][0, 0, 0, 0] = 0
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, tiny_cnn_spec, params, mask)
    spec2, params2, mask2 = load_checkpoint(path)
    assert spec2 == tiny_cnn_spec
    for a, b in zip(params.weights + params.biases, params2.weights + params2.biases):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(mask.layers, mask2.layers):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_without_mask(tmp_path, tiny_mlp_spec):
    params = seeded_params(tiny_mlp_spec, 21)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, tiny_mlp_spec, params)
    _, _, mask = load_checkpoint(path)
    assert mask is None
