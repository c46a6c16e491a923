import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from nvipomdp.exceptions import DimensionMismatch, NonFiniteLoss
from nvipomdp.neural import (
    AlphaNetRegressor,
    Mlp,
    TrainConfig,
    backprop_gradients,
    gradient_check,
    mse,
    predict,
    predict_batch,
    train,
    train_with_retry,
)


def _zero_net(dims, out_bias=0.0):
    weights = [np.zeros((dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    biases[-1][:] = out_bias
    return Mlp(dims, weights, biases)


class TestPredict:
    def test_zero_weights_bias_only(self):
        net = _zero_net((3, 5, 1), out_bias=2.5)
        X = np.random.default_rng(0).normal(size=(10, 3))
        np.testing.assert_array_equal(predict_batch(net, X), 2.5)

    def test_linear_single_layer(self):
        w = np.array([[2.0], [-1.0]])
        net = Mlp((2, 1), [w], [np.zeros(1)])
        assert predict(net, np.array([3.0, 4.0])) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        net = Mlp.create(3, (4,), 0)
        with pytest.raises(DimensionMismatch):
            predict(net, np.zeros(2))
        with pytest.raises(DimensionMismatch):
            predict_batch(net, np.zeros((5, 4)))

    def test_trained_constant_generalizes(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(200, 2))
        net = Mlp.create(2, (16,), 1)
        train(net, X, np.full(200, 7.0), TrainConfig(early_stop_mse=1e-4))
        held = rng.uniform(-1, 1, size=(50, 2))
        np.testing.assert_allclose(predict_batch(net, held), 7.0, atol=0.05)


class TestPredictBatch:
    def test_batch_of_one(self):
        net = Mlp.create(3, (8, 4), 2)
        x = np.array([0.1, -0.2, 0.3])
        assert predict_batch(net, x[None])[0] == predict(net, x)

    def test_duplicated_rows(self):
        net = Mlp.create(2, (8,), 2)
        X = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
        out = predict_batch(net, X)
        assert out[0] == out[1]

    def test_large_batch_matches_rows(self):
        net = Mlp.create(4, (16, 8), 3)
        X = np.random.default_rng(3).normal(size=(10_000, 4))
        batch = predict_batch(net, X)
        rows = np.array([predict(net, x) for x in X])
        np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
    def test_rowwise_property(self, seed, n):
        rng = np.random.default_rng(seed)
        net = Mlp.create(3, (6, 5), rng)
        net.y_mean, net.y_scale = float(rng.normal()), float(rng.uniform(0.5, 3))
        X = rng.normal(size=(n, 3))
        np.testing.assert_allclose(predict_batch(net, X), [predict(net, x) for x in X], atol=1e-12)


class TestTrain:
    def test_constant_target(self):
        X = np.random.default_rng(0).normal(size=(64, 2))
        rep = train(Mlp.create(2, (32,), 0), X, np.full(64, -3.0), TrainConfig(early_stop_mse=0.01))
        assert rep.final_mse < 0.01 and rep.epochs <= 200

    def test_linear_target(self):
        x = np.linspace(-1, 1, 200)[:, None]
        net = Mlp.create(1, (128,), 0)
        rep = train(net, x, 3 * x[:, 0] + 1, TrainConfig(early_stop_mse=0.01))
        assert rep.final_mse < 0.01
        assert mse(net, x, 3 * x[:, 0] + 1) == pytest.approx(rep.final_mse, rel=1e-3)

    def test_xor_target(self):
        X = np.random.default_rng(0).uniform(-1, 1, size=(400, 2))
        Y = np.sign(X[:, 0] * X[:, 1])
        rep = train(Mlp.create(2, (128, 64, 32), 0), X, Y, TrainConfig(early_stop_mse=0.05))
        assert rep.final_mse < 0.05

    def test_minibatch_path(self):
        X = np.random.default_rng(1).uniform(-1, 1, size=(3000, 1))
        rep = train(Mlp.create(1, (32,), 0), X, 2 * X[:, 0], TrainConfig(batch_size=256, early_stop_mse=0.01))
        assert rep.final_mse < 0.01

    def test_bitwise_determinism(self):
        X = np.random.default_rng(2).normal(size=(100, 3))
        Y = np.sin(X).sum(axis=1)
        nets = []
        for _ in range(2):
            net = Mlp.create(3, (16, 8), 9)
            train(net, X, Y, TrainConfig(max_epochs=50, seed=4))
            nets.append(net)
        for p, q in zip(nets[0].parameters(), nets[1].parameters()):
            np.testing.assert_array_equal(p, q)

    def test_max_epochs_respected(self):
        X = np.random.default_rng(2).normal(size=(50, 2))
        rep = train(Mlp.create(2, (4,), 0), X, np.sin(10 * X[:, 0]), TrainConfig(max_epochs=7, early_stop_mse=1e-9))
        assert rep.epochs == 7

    def test_double_precision_option(self):
        x = np.linspace(-1, 1, 100)[:, None]
        net = Mlp.create(1, (32,), 0)
        rep = train(net, x, x[:, 0] ** 2, TrainConfig(early_stop_mse=0.01, precision="double"))
        assert rep.final_mse < 0.01
        assert all(p.dtype == np.float64 for p in net.parameters())

    def test_weights_stay_double_after_single_precision_fit(self):
        net = Mlp.create(1, (8,), 0)
        train(net, np.zeros((4, 1)), np.ones(4), TrainConfig(max_epochs=3))
        assert all(p.dtype == np.float64 for p in net.parameters())

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            train(Mlp.create(1, (4,), 0), np.zeros((3, 1)), np.zeros(2))

    def test_non_finite_loss_raised(self):
        X = np.random.default_rng(0).normal(size=(20, 1))
        with pytest.raises(NonFiniteLoss):
            train(Mlp.create(1, (8,), 0), X, np.full(20, np.inf))

    def test_retry_lowers_learning_rate(self):
        calls = []

        def factory():
            calls.append(1)
            return Mlp.create(1, (8,), 0)

        X = np.random.default_rng(0).normal(size=(20, 1))
        with pytest.raises(NonFiniteLoss):
            train_with_retry(factory, X, np.full(20, np.nan), TrainConfig())
        assert len(calls) == 2

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(precision="half")


class TestGradientCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_small_net(self, seed):
        rng = np.random.default_rng(seed)
        net = Mlp.create(3, (5, 4), rng)
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(4, 3))
        y = rng.normal(size=4)
        assert gradient_check(net, x, y) <= 1e-4

    def test_zero_input_zero_weights(self):
        net = _zero_net((2, 3, 1))
        grads = backprop_gradients(net, np.zeros((1, 2)), np.array([1.0]))
        np.testing.assert_array_equal(grads[0], 0.0)
        np.testing.assert_array_equal(grads[1], 0.0)

    def test_linear_net_closed_form(self):
        w = np.array([[0.5], [-1.5]])
        b = np.array([0.25])
        net = Mlp((2, 1), [w], [b])
        x = np.array([[1.0, 2.0], [-0.5, 0.3]])
        y = np.array([0.7, -0.1])
        r = x @ w[:, 0] + b[0] - y
        gw, gb = backprop_gradients(net, x, y)
        np.testing.assert_allclose(gw[:, 0], 2 * x.T @ r, atol=1e-10)
        np.testing.assert_allclose(gb, [2 * r.sum()], atol=1e-10)


class TestSerialization:
    def test_round_trip_preserves_predictions(self):
        X = np.random.default_rng(0).normal(size=(30, 2))
        net = Mlp.create(2, (8, 4), 0)
        train(net, X, 50 * X[:, 0] + 10, TrainConfig(max_epochs=20))
        back = Mlp.from_dict(net.to_dict())
        np.testing.assert_array_equal(predict_batch(back, X), predict_batch(net, X))

    def test_missing_output_scaling_defaults(self):
        d = Mlp.create(2, (3,), 0).to_dict()
        del d["y_mean"], d["y_scale"]
        net = Mlp.from_dict(d)
        assert (net.y_mean, net.y_scale) == (0.0, 1.0)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Mlp((2, 3, 1), [np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])


class TestAlphaNetRegressor:
    def test_fit_predict(self):
        X = np.random.default_rng(0).uniform(-1, 1, size=(200, 1))
        est = AlphaNetRegressor(hidden_layer_sizes=(32,), early_stop_mse=0.01).fit(X, 2 * X[:, 0] - 1)
        assert est.score(X, 2 * X[:, 0] - 1) > 0.99
        assert est.n_features_in_ == 1

    def test_clone_and_params(self):
        est = AlphaNetRegressor(max_epochs=5, precision="double")
        c = clone(est)
        assert c.get_params()["max_epochs"] == 5 and c.get_params()["precision"] == "double"

    def test_predict_before_fit(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            AlphaNetRegressor().predict(np.zeros((1, 1)))
