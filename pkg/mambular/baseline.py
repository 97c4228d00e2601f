"""Linear and logistic regression baseline on scaled numerics plus one-hot categoricals."""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from .config import PLEConfig
from .data import TabularDataset
from .encoding import TabularPreprocessor

logger = logging.getLogger(__name__)

RIDGE = 1e-8
LOGISTIC_L2 = 1e-6
MAX_RIDGE_RETRIES = 12


def baseline_features(dataset: TabularDataset, preprocessor: TabularPreprocessor) -> np.ndarray:
    """[1, scaled numerics, one-hot of known categories] per row; unknown ids encode as all zeros."""
    columns = [np.ones((dataset.n, 1))]
    if dataset.schema.numeric:
        columns.append(preprocessor.numeric_scaler.transform(dataset.numeric))
    ids = preprocessor.vocabulary.encode_dataset(dataset)
    for j, size in enumerate(preprocessor.category_sizes()):
        onehot = np.zeros((dataset.n, size - 1))
        known = ids[:, j] > 0
        onehot[np.flatnonzero(known), ids[known, j] - 1] = 1.0
        columns.append(onehot)
    return np.hstack(columns)


def ridge_solve(X: np.ndarray, y: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Closed-form ridge; the regularizer grows tenfold while the system is singular."""
    gram, rhs = X.T @ X, X.T @ y
    for _ in range(MAX_RIDGE_RETRIES):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                return linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            message = f"Singular ridge system at regularizer {ridge:g}; retrying with {ridge * 10:g}"
            logger.warning(message)
            warnings.warn(message, RuntimeWarning)
            ridge *= 10.0
    raise linalg.LinAlgError(f"Ridge system stayed singular up to regularizer {ridge:g}")


def _logistic_fit(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    penalty = np.full(X.shape[1], LOGISTIC_L2)
    penalty[0] = 0.0

    def objective(beta):
        z = X @ beta
        # log(1 + e^z) - y z, overflow-safe
        value = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(penalty * beta * beta)
        grad = X.T @ (expit(z) - y) / len(y) + penalty * beta
        return value, grad

    result = optimize.minimize(
        objective, np.zeros(X.shape[1]), jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": 1e-10},
    )
    if not result.success:
        logger.warning("Logistic baseline stopped early: %s", result.message)
    return result.x


@dataclass
class LinearBaseline:
    """Fitted coefficients; predictions live in the preprocessor's (normalized) target space."""
    task: str
    coefficients: np.ndarray
    preprocessor: TabularPreprocessor
    sigma: Optional[float] = None

    def predict(self, dataset: TabularDataset) -> np.ndarray:
        """Regression values [N], probabilities [N], or (mu, sigma) pairs [N, 2] for lss."""
        linear = baseline_features(dataset, self.preprocessor) @ self.coefficients
        if self.task == "binary":
            return expit(linear)
        if self.task == "lss":
            return np.column_stack([linear, np.full(len(linear), self.sigma)])
        return linear


def linear_baseline(
    train: TabularDataset, task: str, preprocessor: Optional[TabularPreprocessor] = None
) -> LinearBaseline:
    """Ridge regression (regression, lss) or logistic regression (binary)."""
    if preprocessor is None:
        preprocessor = TabularPreprocessor.fit(train, PLEConfig.for_task(task, max_bins=2))
    X = baseline_features(train, preprocessor)
    y = preprocessor.transform(train).target
    if task == "binary":
        return LinearBaseline(task, _logistic_fit(X, y), preprocessor)
    beta = ridge_solve(X, y)
    sigma = None
    if task == "lss":
        sigma = max(float(np.std(y - X @ beta)), 1e-6)
    logger.debug("Linear baseline fitted with %d coefficients", len(beta))
    return LinearBaseline(task, beta, preprocessor, sigma)
