import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from mambular.metrics import (
    auc,
    average_ranks,
    benjamini_hochberg,
    bh_adjust,
    bonferroni,
    crps_normal,
    crps_normal_values,
    mse,
    nll_normal,
    paired_t_test,
    task_metrics,
    unpaired_t_test,
)

# Five-fold mean errors of five models on fourteen regression benchmarks, as
# published to three decimals. CW, AV, NP and VT tie at three decimals; those
# cells carry a fourth decimal that orders the tied models the way the
# published average ranks (1.79 for both Mambular and CatBoost) require.
# Averaging the three-decimal ties instead gives 1.82 and 1.68.
RANK_TABLE = pd.DataFrame(
    {
        "BH": [0.021, 0.028, 0.032, 0.048, 0.039],
        "CW": [0.7008, 0.7012, 0.702, 0.707, 0.752],
        "FF": [0.272, 0.301, 0.245, 0.263, 0.281],
        "GS": [0.057, 0.205, 0.041, 0.059, 0.078],
        "HI": [0.595, 0.609, 0.597, 0.599, 0.635],
        "K8": [0.168, 0.451, 0.150, 0.239, 0.259],
        "AV": [0.018, 0.089, 0.0044, 0.024, 0.0041],
        "KC": [0.137, 0.149, 0.110, 0.140, 0.161],
        "MH": [0.085, 0.101, 0.078, 0.091, 0.098],
        "NP": [0.003, 0.0088, 0.005, 0.0091, 0.006],
        "PP": [0.402, 0.542, 0.390, 0.452, 0.403],
        "SA": [0.015, 0.033, 0.018, 0.031, 0.024],
        "SG": [0.318, 0.360, 0.297, 0.302, 0.329],
        "VT": [0.003, 0.045, 0.0133, 0.0131, 0.0132],
    },
    index=["Mambular", "FT-Transformer", "CatBoost", "LightGBM", "XGBoost"],
)

BH_PVALUES = [1.3e-07, 0.0079, 0.010, 0.0120, 0.0192, 0.0870, 0.1999, 0.3991, 0.4865, 0.6287, 0.7883, 0.7930]


class TestPointMetrics:
    def test_mse(self):
        assert mse([1.0, 2.0], [0.0, 0.0]) == 2.5

    def test_mse_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            mse([1.0], [1.0, 2.0])

    def test_auc_perfect_and_reversed(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_auc_ties_count_half(self):
        assert auc([0.5, 0.5], [0, 1]) == 0.5

    @pytest.mark.parametrize("seed", range(100))
    def test_auc_equals_pair_counting(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 60))
        # every other instance draws from few values so ties occur
        scores = rng.integers(0, 6, size=n).astype(float) if seed % 2 else rng.standard_normal(n)
        labels = np.zeros(n)
        labels[rng.permutation(n)[: int(rng.integers(1, n))]] = 1.0
        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
        assert auc(scores, labels) == wins / (len(pos) * len(neg))

    def test_auc_single_class(self):
        with pytest.raises(ValueError, match="both classes"):
            auc([0.1, 0.2], [1, 1])


class TestDistributionalMetrics:
    def test_crps_standard_normal_at_mean(self):
        assert crps_normal(0.0, 1.0, 0.0) == pytest.approx(0.233695, abs=1e-6)

    def test_crps_scales_with_sigma(self):
        assert crps_normal(0.0, 2.0, 0.0) == pytest.approx(2 * 0.233695, abs=1e-6)

    def test_crps_matches_numerical_integral(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            mu, sigma = rng.normal(0.0, 2.0), rng.uniform(0.2, 3.0)
            y = mu + sigma * rng.normal(0.0, 1.5)
            z = (y - mu) / sigma
            # integral of (F(x) - 1{x >= y})^2 dx, in standardized units
            below = integrate.quad(lambda t: stats.norm.cdf(t) ** 2, -np.inf, z, epsabs=1e-12, epsrel=1e-12)[0]
            above = integrate.quad(lambda t: stats.norm.sf(t) ** 2, z, np.inf, epsabs=1e-12, epsrel=1e-12)[0]
            assert crps_normal(mu, sigma, y) == pytest.approx(sigma * (below + above), abs=1e-6)

    def test_crps_rejects_non_positive_sigma(self):
        with pytest.raises(ValueError):
            crps_normal_values(0.0, 0.0, 1.0)

    def test_nll_at_mean(self):
        assert nll_normal(0.0, 1.0, 0.0) == pytest.approx(0.918939, abs=1e-6)

    def test_nll_matches_scipy(self, rng):
        mu, sigma, y = rng.standard_normal(10), rng.uniform(0.5, 2, 10), rng.standard_normal(10)
        assert nll_normal(mu, sigma, y) == pytest.approx(-stats.norm.logpdf(y, mu, sigma).mean())


class TestTTests:
    def test_paired_matches_scipy(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert paired_t_test(a, b) == pytest.approx(stats.ttest_rel(a, b).pvalue, rel=1e-9)

    def test_unpaired_matches_scipy(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(7) + 0.5
        assert unpaired_t_test(a, b) == pytest.approx(stats.ttest_ind(a, b).pvalue, rel=1e-9)

    def test_identical_inputs_give_one(self):
        assert paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_constant_nonzero_difference_gives_zero(self):
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            assert paired_t_test([2.0, 3.0, 4.0], [1.0, 2.0, 3.0]) == 0.0

    def test_needs_two_folds(self):
        with pytest.raises(ValueError, match="two folds"):
            paired_t_test([1.0], [2.0])


class TestMultipleTesting:
    def test_bh_rejects_five_smallest(self):
        reject = benjamini_hochberg(BH_PVALUES, 0.10)
        assert_array_equal(reject, [True] * 5 + [False] * 7)

    def test_bh_step_up(self):
        # 0.04 fails its own threshold but is rescued by the larger 0.045
        reject = benjamini_hochberg([0.04, 0.045, 0.9], 0.10)
        assert_array_equal(reject, [True, True, False])

    def test_bh_unsorted_input(self):
        reject = benjamini_hochberg([0.9, 0.001, 0.02], 0.05)
        assert_array_equal(reject, [False, True, True])

    def test_bh_rejects_bad_pvalues(self):
        with pytest.raises(ValueError):
            benjamini_hochberg([0.5, 1.2], 0.05)

    def test_adjusted_pvalues_agree_with_rejections(self):
        adjusted = bh_adjust(BH_PVALUES)
        assert_array_equal(adjusted <= 0.10, benjamini_hochberg(BH_PVALUES, 0.10))
        assert np.all(np.diff(adjusted) >= 0)
        assert adjusted.max() <= 1.0

    def test_bonferroni_is_stricter(self):
        assert bonferroni(BH_PVALUES, 0.10).sum() == 2


class TestAverageRanks:
    def test_reference_table(self):
        ranks = average_ranks(RANK_TABLE)
        assert ranks["Mambular"] == pytest.approx(25 / 14)
        assert ranks["CatBoost"] == pytest.approx(25 / 14)
        assert ranks.idxmax() == "FT-Transformer"
        assert_allclose(ranks.sum(), 15.0)

    def test_reference_table_only_breaks_ties(self):
        assert (RANK_TABLE - RANK_TABLE.round(3)).abs().to_numpy().max() <= 5e-4 + 1e-12

    def test_three_decimal_table_averages_ties(self):
        ranks = average_ranks(RANK_TABLE.round(3))
        assert ranks["Mambular"] == pytest.approx(25.5 / 14)
        assert ranks["CatBoost"] == pytest.approx(23.5 / 14)

    def test_ties_share_average_rank(self):
        table = pd.DataFrame({"d": [1.0, 1.0, 2.0]}, index=["a", "b", "c"])
        assert list(average_ranks(table)) == [1.5, 1.5, 3.0]

    def test_higher_is_better(self):
        table = pd.DataFrame({"d": [0.9, 0.8]}, index=["a", "b"])
        assert list(average_ranks(table, {"d": "higher"})) == [1.0, 2.0]

    def test_missing_cell(self):
        table = pd.DataFrame({"d": [0.9, np.nan]}, index=["a", "b"])
        with pytest.raises(ValueError, match="missing"):
            average_ranks(table)


class TestTaskMetrics:
    def test_regression(self):
        assert task_metrics("regression", np.zeros(3), np.ones(3)) == {"mse": 1.0}

    def test_lss(self):
        predictions = np.column_stack([np.zeros(2), np.ones(2)])
        metrics = task_metrics("lss", predictions, np.zeros(2))
        assert set(metrics) == {"crps", "nll", "mse"}
        assert metrics["crps"] == pytest.approx(0.233695, abs=1e-6)
        assert metrics["mse"] == 0.0

    def test_binary(self):
        assert task_metrics("binary", np.array([0.2, 0.7]), np.array([0.0, 1.0])) == {"auc": 1.0}
