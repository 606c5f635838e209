import numpy as np
import pytest

from solarboost.baselines import (
    BaselineKind, BaselineModel, average_features, flatten_features, predict_baseline,
    train_baseline, unflatten_features, uniform_capacities,
)
from solarboost.core import AggregateOutputSeries, Dataset, GridFeatureTensor, HyperParams
from solarboost.gbtree import RegressionTreeEnsemble, Tree, boost_squared_error
from solarboost.synthgen import GenSpec, generate

HP = HyperParams(n_rounds=40, learning_rate=0.3)


def const_model(kind, value, K=2, D=1):
    return BaselineModel(BaselineKind(kind), RegressionTreeEnsemble(1.0, trees=[Tree.leaf(value)]), D, K)


class TestFeatures:
    def test_average_hand(self):
        x = np.array([[[1.0, 3.0], [3.0, 5.0]]])
        np.testing.assert_array_equal(average_features(x), [[2.0, 4.0]])

    def test_average_single_grid(self):
        x = np.random.default_rng(0).random((4, 1, 3))
        np.testing.assert_array_equal(average_features(x), x[:, 0])

    def test_average_loop_oracle(self):
        x = np.random.default_rng(1).random((7, 5, 3))
        ref = np.zeros((7, 3))
        for t in range(7):
            for d in range(3):
                ref[t, d] = sum(x[t, i, d] for i in range(5)) / 5
        np.testing.assert_allclose(average_features(x), ref, rtol=1e-15)

    def test_flatten_hand(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        np.testing.assert_array_equal(flatten_features(x), [[1.0, 2.0, 3.0, 4.0]])

    def test_flatten_single_grid(self):
        x = np.random.default_rng(2).random((4, 1, 3))
        np.testing.assert_array_equal(flatten_features(x), x[:, 0])

    def test_flatten_roundtrip(self):
        x = np.random.default_rng(3).random((6, 4, 3))
        np.testing.assert_array_equal(unflatten_features(flatten_features(x), 4), x)


@pytest.fixture(scope="module")
def data():
    return generate(GenSpec(T_blocks=10, repeat=24, K=4, seed=1))


class TestTrainPredict:
    def test_average_implies_uniform_capacity(self, data):
        m = train_baseline("average_grid", data, HP)
        f = m.ensemble.predict(average_features(data.features))
        pred = predict_baseline(m, data.features, data.totals)
        implied = uniform_capacities(data.totals, data.K)
        np.testing.assert_allclose(pred, data.totals * f, rtol=1e-15)
        np.testing.assert_allclose(implied.sum(axis=1), data.totals)
        assert np.all(implied == implied[:, :1])

    def test_flatten_k1_d1_is_plain_regression(self):
        rng = np.random.default_rng(4)
        x = rng.random((50, 1, 1))
        y = np.sin(4 * x[:, 0, 0])
        ds = Dataset(GridFeatureTensor(x), AggregateOutputSeries(y), np.ones(50))
        m = train_baseline("flatten_grid", ds, HP)
        ref = boost_squared_error(x[:, 0], y, HP.n_rounds, HP.learning_rate, HP.max_depth, HP.tree_reg)
        np.testing.assert_array_equal(predict_baseline(m, x), ref.predict(x[:, 0]))

    def test_ideal_fit_beats_average_on_unit(self, data):
        ideal = train_baseline("ideal_fit", data, HP)
        avg = train_baseline("average_grid", data, HP)
        x0, y0 = data.features.values[:, 0], data.truth_unit[:, 0]
        e_ideal = np.sqrt(np.mean((ideal.unit_output(x0) - y0) ** 2))
        e_avg = np.sqrt(np.mean((avg.unit_output(x0) - y0) ** 2))
        assert e_ideal < 0.5 * e_avg

    def test_ideal_needs_truth(self, data):
        bare = Dataset(data.features, data.outputs, data.totals)
        with pytest.raises(ValueError):
            train_baseline("ideal_fit", bare, HP)

    def test_average_constant_function(self):
        m = const_model("average_grid", 0.5)
        assert predict_baseline(m, np.zeros((1, 2, 1)), [4.0])[0] == 2.0

    def test_flatten_empty(self):
        m = BaselineModel(BaselineKind.FLATTEN_GRID, RegressionTreeEnsemble(0.1), 1, 2)
        np.testing.assert_array_equal(predict_baseline(m, np.ones((3, 2, 1))), 0.0)

    def test_average_linear_in_totals(self, data):
        m = train_baseline("average_grid", data, HP)
        a = predict_baseline(m, data.features, data.totals)
        b = predict_baseline(m, data.features, 2 * data.totals)
        np.testing.assert_allclose(b, 2 * a, rtol=1e-15)

    def test_per_unit_target_constant_totals(self, data):
        ds = Dataset(data.features, data.outputs, np.ones(data.T))
        a = predict_baseline(train_baseline("average_grid", ds, HP), ds.features, ds.totals)
        b = predict_baseline(train_baseline("average_grid", ds, HP, per_unit_target=False), ds.features)
        np.testing.assert_array_equal(a, b)

    def test_layout_mismatch(self, data):
        m = train_baseline("flatten_grid", data, HP)
        with pytest.raises(ValueError):
            predict_baseline(m, np.zeros((3, data.K + 1, data.D)))
        assert m.input_dim == data.K * data.D

    def test_deterministic(self, data):
        for kind in BaselineKind:
            a = train_baseline(kind, data, HP)
            b = train_baseline(kind, data, HP)
            assert a.ensemble.to_dict() == b.ensemble.to_dict()

    def test_flatten_has_no_unit_output(self, data):
        with pytest.raises(ValueError):
            train_baseline("flatten_grid", data, HP).unit_output(np.zeros((2, data.D)))
