"""Synthetic ordering dataset with known linear effects and interactions.

Five standard-normalized numeric features (two correlated pairs) and five
four-level categoricals drive a target made of unit linear effects, three
interaction terms and Gaussian noise. All coefficients are module constants so
the ground truth can be written next to the data.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .config import make_rng
from .data import DatasetSchema, TabularDataset

logger = logging.getLogger(__name__)

N_ROWS = 5000
NUMERIC_NAMES = ("num_1", "num_2", "num_3", "num_4", "num_5")
CATEGORICAL_NAMES = ("cat_A", "cat_B", "cat_C", "cat_D", "cat_E")
LEVELS = ("a", "b", "c", "d")
LEVEL_EFFECTS = (-0.75, -0.25, 0.25, 0.75)
CORRELATED_PAIRS = (("num_1", "num_2", 0.8), ("num_3", "num_4", 0.6))
NUMERIC_WEIGHT = 1.0
CATEGORICAL_WEIGHT = 1.0
NOISE_STD = 0.5


@dataclass(frozen=True)
class Interaction:
    kind: str  # num-num, num-cat, cat-cat
    terms: Tuple[str, str]
    weight: float


INTERACTIONS = (
    Interaction("num-num", ("num_1", "num_2"), 1.5),
    Interaction("num-cat", ("num_3", "cat_A"), 1.0),
    Interaction("cat-cat", ("cat_B", "cat_C"), 0.8),
)


@dataclass
class SyntheticTruth:
    """Ground-truth coefficient record for one generated dataset."""
    seed: int
    n_rows: int
    numeric_coefficients: Dict[str, float]
    categorical_coefficients: Dict[str, float]
    level_effects: Dict[str, float]
    interactions: List[Interaction]
    correlations: List[Tuple[str, str, float]]
    noise_std: float
    intercept: float = 0.0
    notes: str = field(
        default="categorical terms enter through their level effect; interactions are products"
    )

    def coefficient_names(self) -> List[str]:
        return (
            ["intercept"]
            + list(self.numeric_coefficients)
            + list(self.categorical_coefficients)
            + [":".join(i.terms) for i in self.interactions]
        )

    def coefficient_vector(self) -> np.ndarray:
        return np.array(
            [self.intercept]
            + list(self.numeric_coefficients.values())
            + list(self.categorical_coefficients.values())
            + [i.weight for i in self.interactions]
        )

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["interactions"] = [
            {"kind": i.kind, "terms": list(i.terms), "weight": i.weight} for i in self.interactions
        ]
        payload["correlations"] = [
            {"pair": [a, b], "target": r} for a, b, r in self.correlations
        ]
        return payload

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def synthetic_schema() -> DatasetSchema:
    return DatasetSchema(
        numeric=NUMERIC_NAMES,
        categorical=CATEGORICAL_NAMES,
        target="y",
        task="regression",
        name="synthetic-ordering",
    )


def _level_effect(values: np.ndarray) -> np.ndarray:
    lookup = dict(zip(LEVELS, LEVEL_EFFECTS))
    return np.array([lookup[v] for v in values], dtype=np.float64)


def design_matrix(dataset: TabularDataset, truth: SyntheticTruth) -> np.ndarray:
    """True design (intercept, linear terms, interaction products) matching `coefficient_vector`."""
    schema = dataset.schema
    num = {n: dataset.numeric[:, i] for i, n in enumerate(schema.numeric)}
    cat = {n: _level_effect(dataset.categorical[:, i]) for i, n in enumerate(schema.categorical)}
    value = {**num, **cat}
    columns = [np.ones(dataset.n)]
    columns += [num[n] for n in truth.numeric_coefficients]
    columns += [cat[n] for n in truth.categorical_coefficients]
    columns += [value[a] * value[b] for a, b in (i.terms for i in truth.interactions)]
    return np.column_stack(columns)


def generate_synthetic_ordering_dataset(
    seed: int = 0, n_rows: int = N_ROWS
) -> Tuple[TabularDataset, SyntheticTruth]:
    rng = make_rng(seed, "synth")

    raw = rng.standard_normal((n_rows, len(NUMERIC_NAMES)))
    index = {n: i for i, n in enumerate(NUMERIC_NAMES)}
    for a, b, rho in CORRELATED_PAIRS:
        raw[:, index[b]] = rho * raw[:, index[a]] + np.sqrt(1.0 - rho**2) * raw[:, index[b]]
    numeric = (raw - raw.mean(axis=0)) / raw.std(axis=0)

    # balanced levels so every category is observed
    categorical = np.empty((n_rows, len(CATEGORICAL_NAMES)), dtype=object)
    for j in range(len(CATEGORICAL_NAMES)):
        codes = rng.permutation(np.resize(np.arange(len(LEVELS)), n_rows))
        categorical[:, j] = np.array(LEVELS, dtype=object)[codes]

    truth = SyntheticTruth(
        seed=seed,
        n_rows=n_rows,
        numeric_coefficients={n: NUMERIC_WEIGHT for n in NUMERIC_NAMES},
        categorical_coefficients={n: CATEGORICAL_WEIGHT for n in CATEGORICAL_NAMES},
        level_effects=dict(zip(LEVELS, LEVEL_EFFECTS)),
        interactions=list(INTERACTIONS),
        correlations=list(CORRELATED_PAIRS),
        noise_std=NOISE_STD,
    )
    features = TabularDataset(synthetic_schema(), numeric, categorical, np.zeros(n_rows))
    signal = design_matrix(features, truth) @ truth.coefficient_vector()
    target = signal + NOISE_STD * rng.standard_normal(n_rows)
    logger.info("Generated synthetic ordering dataset: %d rows, seed %d", n_rows, seed)
    return features.with_target(target), truth
