"""Metrics and significance tests used to compare models across folds."""

import logging
import math
import warnings
from typing import Dict, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import betainc, erf
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(a, b, what: str):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"{what}: lengths differ ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError(f"{what}: empty input")
    return a, b


def mse(pred, y) -> float:
    pred, y = _pair(pred, y, "mse")
    return float(np.mean((pred - y) ** 2))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores, labels = _pair(scores, labels, "auc")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("auc labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def normal_cdf(z):
    return 0.5 * (1.0 + erf(np.asarray(z) / math.sqrt(2.0)))


def crps_normal_values(mu, sigma, y) -> np.ndarray:
    """Closed-form CRPS of N(mu, sigma^2) at each observation."""
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (mu, sigma, y)))
    if np.any(sigma <= 0):
        raise ValueError("crps_normal needs sigma > 0")
    z = (y - mu) / sigma
    pdf = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * pdf - INV_SQRT_PI)


def crps_normal(mu, sigma, y) -> float:
    """Mean CRPS over rows."""
    return float(np.mean(crps_normal_values(mu, sigma, y)))


def nll_normal(mu, sigma, y) -> float:
    """Mean negative log-likelihood of y under N(mu, sigma^2)."""
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (mu, sigma, y)))
    if np.any(sigma <= 0):
        raise ValueError("nll_normal needs sigma > 0")
    return float(np.mean(0.5 * np.log(2.0 * math.pi * sigma**2) + (y - mu) ** 2 / (2.0 * sigma**2)))


def _t_pvalue(t: float, df: float) -> float:
    """Two-sided Student-t p-value via the regularized incomplete beta."""
    return float(betainc(0.5 * df, 0.5, df / (df + t * t)))


def _degenerate(mean: float, what: str) -> float:
    if mean == 0.0:
        return 1.0
    message = f"{what}: zero-variance differences with nonzero mean; reporting p = 0"
    logger.warning(message)
    warnings.warn(message, RuntimeWarning)
    return 0.0


def paired_t_test(a, b) -> float:
    """Two-sided paired t-test on per-fold metrics."""
    a, b = _pair(a, b, "paired_t_test")
    if a.size < 2:
        raise ValueError("paired_t_test needs at least two folds")
    d = a - b
    mean, sd = float(np.mean(d)), float(np.std(d, ddof=1))
    if sd == 0.0:
        return _degenerate(mean, "paired_t_test")
    t = mean / (sd / math.sqrt(d.size))
    return _t_pvalue(t, d.size - 1)


def unpaired_t_test(a, b) -> float:
    """Two-sided two-sample t-test with pooled variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("unpaired_t_test needs at least two values per group")
    df = a.size + b.size - 2
    pooled = ((a.size - 1) * np.var(a, ddof=1) + (b.size - 1) * np.var(b, ddof=1)) / df
    mean = float(np.mean(a) - np.mean(b))
    if pooled == 0.0:
        return _degenerate(mean, "unpaired_t_test")
    t = mean / math.sqrt(pooled * (1.0 / a.size + 1.0 / b.size))
    return _t_pvalue(t, df)


def _check_pvalues(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def benjamini_hochberg(p, q: float) -> np.ndarray:
    """Step-up FDR control: reject the i smallest p-values for the largest i with p_(i) <= i q / m."""
    p = _check_pvalues(p)
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    passing = np.flatnonzero(p[order] <= q * np.arange(1, m + 1) / m)
    if passing.size:
        reject[order[: passing[-1] + 1]] = True
    return reject


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values (monotone, clipped to 1)."""
    p = _check_pvalues(p)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


def bonferroni(p, q: float) -> np.ndarray:
    p = _check_pvalues(p)
    return p <= q / max(p.size, 1)


def average_ranks(table: pd.DataFrame, directions: Union[str, Dict[str, str]] = "lower") -> pd.Series:
    """Mean rank per model (rows) across datasets (columns); 1 is best, ties averaged."""
    if table.isna().any().any():
        missing = [(m, d) for m in table.index for d in table.columns if pd.isna(table.loc[m, d])]
        raise ValueError(f"average_ranks needs a complete table; missing cells {missing}")
    ranks = {}
    for dataset in table.columns:
        direction = directions if isinstance(directions, str) else directions[dataset]
        if direction not in ("lower", "higher"):
            raise ValueError(f"Unknown direction {direction!r} for {dataset}")
        values = table[dataset].to_numpy(dtype=np.float64)
        ranks[dataset] = rankdata(values if direction == "lower" else -values, method="average")
    return pd.DataFrame(ranks, index=table.index).mean(axis=1)


METRICS_BY_TASK: Dict[str, Sequence[str]] = {
    "regression": ("mse",),
    "binary": ("auc",),
    "lss": ("crps", "nll", "mse"),
}
LOWER_IS_BETTER = {"mse": True, "crps": True, "nll": True, "auc": False}


def task_metrics(task: str, predictions: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    """Every reported metric for a task from model predictions."""
    if task == "regression":
        return {"mse": mse(predictions, y)}
    if task == "binary":
        return {"auc": auc(predictions, y)}
    mu, sigma = predictions[:, 0], predictions[:, 1]
    return {"crps": crps_normal(mu, sigma, y), "nll": nll_normal(mu, sigma, y), "mse": mse(mu, y)}
