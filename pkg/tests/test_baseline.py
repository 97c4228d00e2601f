import numpy as np
import pytest
from numpy.testing import assert_allclose

from mambular.baseline import baseline_features, linear_baseline, ridge_solve
from mambular.config import PLEConfig
from mambular.data import DatasetSchema, TabularDataset
from mambular.encoding import TabularPreprocessor
from mambular.metrics import auc, mse


class TestBaselineFeatures:
    def test_layout(self, mixed_dataset):
        pre = TabularPreprocessor.fit(mixed_dataset, PLEConfig(max_bins=4, min_leaf=8))
        X = baseline_features(mixed_dataset, pre)
        # intercept, two numerics, three one-hot levels
        assert X.shape == (120, 6)
        assert_allclose(X[:, 0], 1.0)
        assert_allclose(X[:, 3:].sum(axis=1), 1.0)

    def test_unknown_category_is_all_zero(self, mixed_dataset):
        pre = TabularPreprocessor.fit(mixed_dataset, PLEConfig(max_bins=4, min_leaf=8))
        other = mixed_dataset.take([0])
        other.categorical[0, 0] = "purple"
        assert_allclose(baseline_features(other, pre)[0, 3:], 0.0)


class TestRidgeSolve:
    def test_recovers_exact_coefficients(self, rng):
        X = np.column_stack([np.ones(50), rng.standard_normal((50, 3))])
        beta = np.array([0.5, 1.0, -2.0, 3.0])
        assert_allclose(ridge_solve(X, X @ beta), beta, atol=1e-6)

    def test_singular_design_escalates_ridge(self):
        X = np.column_stack([np.ones(10), np.arange(10.0), np.arange(10.0)])
        with pytest.warns(RuntimeWarning, match="Singular"):
            beta = ridge_solve(X, np.arange(10.0), ridge=1e-14)
        assert np.all(np.isfinite(beta))


class TestLinearBaseline:
    def test_regression_beats_mean(self, mixed_dataset):
        model = linear_baseline(mixed_dataset, "regression")
        target = model.preprocessor.transform(mixed_dataset).target
        assert mse(model.predict(mixed_dataset), target) < mse(np.zeros_like(target), target)

    def test_exact_linear_target(self, rng):
        schema = DatasetSchema(numeric=("a", "b"), categorical=(), target="y", task="regression")
        x = rng.uniform(-1, 1, size=(80, 2))
        dataset = TabularDataset(schema, x, np.empty((80, 0)), 2.0 * x[:, 0] - x[:, 1] + 4.0)
        model = linear_baseline(dataset, "regression")
        predictions = model.preprocessor.inverse_target(model.predict(dataset))
        assert_allclose(predictions, dataset.target, atol=1e-5)

    def test_logistic(self, binary_dataset):
        model = linear_baseline(binary_dataset, "binary")
        probabilities = model.predict(binary_dataset)
        assert np.all((probabilities > 0) & (probabilities < 1))
        assert auc(probabilities, binary_dataset.target) > 0.7

    def test_lss_reports_constant_sigma(self, mixed_dataset):
        model = linear_baseline(mixed_dataset, "lss")
        predictions = model.predict(mixed_dataset)
        assert predictions.shape == (120, 2)
        assert np.all(predictions[:, 1] == model.sigma)
        assert model.sigma > 0
