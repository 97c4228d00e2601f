import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mambular.synthetic import (
    CATEGORICAL_NAMES,
    LEVELS,
    NOISE_STD,
    NUMERIC_NAMES,
    design_matrix,
    generate_synthetic_ordering_dataset,
)


@pytest.fixture(scope="module")
def generated():
    return generate_synthetic_ordering_dataset(seed=11, n_rows=2000)


class TestSyntheticOrderingDataset:
    def test_shape_and_columns(self, generated):
        dataset, _ = generated
        assert dataset.n == 2000
        assert dataset.schema.numeric == NUMERIC_NAMES
        assert dataset.schema.categorical == CATEGORICAL_NAMES
        assert dataset.task == "regression"

    def test_numeric_features_standardized(self, generated):
        dataset, _ = generated
        assert_allclose(dataset.numeric.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(dataset.numeric.std(axis=0), 1.0, atol=1e-12)

    def test_correlated_pairs(self, generated):
        dataset, truth = generated
        corr = np.corrcoef(dataset.numeric, rowvar=False)
        index = {n: i for i, n in enumerate(NUMERIC_NAMES)}
        for a, b, rho in truth.correlations:
            assert corr[index[a], index[b]] == pytest.approx(rho, abs=0.05)
        assert abs(corr[index["num_1"], index["num_5"]]) < 0.1

    def test_all_levels_observed(self, generated):
        dataset, _ = generated
        for j in range(len(CATEGORICAL_NAMES)):
            assert set(dataset.categorical[:, j]) == set(LEVELS)

    def test_deterministic(self):
        a, _ = generate_synthetic_ordering_dataset(seed=5, n_rows=100)
        b, _ = generate_synthetic_ordering_dataset(seed=5, n_rows=100)
        assert_array_equal(a.target, b.target)
        c, _ = generate_synthetic_ordering_dataset(seed=6, n_rows=100)
        assert not np.array_equal(a.target, c.target)

    def test_least_squares_recovers_truth(self, generated):
        dataset, truth = generated
        design = design_matrix(dataset, truth)
        coef, *_ = np.linalg.lstsq(design, dataset.target, rcond=None)
        assert_allclose(coef, truth.coefficient_vector(), atol=0.1)
        residual = dataset.target - design @ coef
        assert residual.std() == pytest.approx(NOISE_STD, rel=0.1)

    def test_truth_serializes(self, generated):
        _, truth = generated
        payload = json.loads(truth.to_json())
        assert payload["seed"] == 11
        assert [i["kind"] for i in payload["interactions"]] == ["num-num", "num-cat", "cat-cat"]
        assert len(truth.coefficient_names()) == len(truth.coefficient_vector())
