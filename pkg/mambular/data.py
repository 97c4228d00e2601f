"""Tabular data: schemas, CSV ingestion, vocabularies, scaling and folds."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from jsonschema import Draft7Validator

from .config import TASKS, make_rng

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
UNKNOWN_TOKEN = "<unk>"
MISSING_MARKERS = ["?", "NA", "N/A", "nan", "NaN", ""]


class SchemaError(ValueError):
    """Raised when a file or schema does not match the declared columns."""


class DataError(ValueError):
    """Raised for unusable values: unparsable cells, constant columns, bad splits."""


DATASET_SCHEMA_SCHEMA = {
    "$schema": "https://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["columns", "target", "task"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "columns": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "kind"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "kind": {"enum": [NUMERIC, CATEGORICAL]},
                },
            },
        },
        "order": {"type": "array", "items": {"type": "string"}},
        "target": {"type": "string", "minLength": 1},
        "task": {"enum": list(TASKS)},
    },
}


@dataclass(frozen=True)
class ColumnSpec:
    """One feature column and its place in the pseudo-sequence."""
    name: str
    kind: str
    position: int


@dataclass(frozen=True)
class DatasetSchema:
    """Typed feature columns of a dataset.

    `numeric` and `categorical` fix the block layout of the value matrices;
    `order` is the sequence order the model sees (numeric block first unless
    reordered).
    """
    numeric: Tuple[str, ...]
    categorical: Tuple[str, ...]
    target: str
    task: str
    order: Tuple[str, ...] = ()
    name: Optional[str] = None

    def __post_init__(self):
        names = list(self.numeric) + list(self.categorical)
        if len(set(names)) != len(names):
            raise SchemaError(f"Column names must be unique: {names}")
        if not names:
            raise SchemaError("Schema declares no feature columns")
        if self.target in names:
            raise SchemaError(f"Target {self.target!r} is also declared as a feature")
        if self.task not in TASKS:
            raise SchemaError(f"Unknown task: {self.task}. Available: {list(TASKS)}")
        if not self.order:
            object.__setattr__(self, "order", tuple(names))
        elif sorted(self.order) != sorted(names):
            raise SchemaError(f"Sequence order {list(self.order)} does not cover columns {names}")

    @property
    def num_features(self) -> int:
        return len(self.numeric) + len(self.categorical)

    @property
    def columns(self) -> List[ColumnSpec]:
        kinds = {n: NUMERIC for n in self.numeric}
        kinds.update({n: CATEGORICAL for n in self.categorical})
        return [ColumnSpec(n, kinds[n], i) for i, n in enumerate(self.order)]

    def feature_order(self) -> List[int]:
        """Block index (numerics, then categoricals) of each sequence position."""
        block = {n: i for i, n in enumerate(self.numeric + self.categorical)}
        return [block[n] for n in self.order]

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "columns": [{"name": n, "kind": NUMERIC} for n in self.numeric]
            + [{"name": n, "kind": CATEGORICAL} for n in self.categorical],
            "target": self.target,
            "task": self.task,
        }
        if list(self.order) != list(self.numeric + self.categorical):
            payload["order"] = list(self.order)
        if self.name:
            payload["name"] = self.name
        return payload

    def to_json(self, path: Optional[str] = None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DatasetSchema":
        errors = [e.message for e in Draft7Validator(DATASET_SCHEMA_SCHEMA).iter_errors(payload)]
        if errors:
            raise SchemaError("Invalid dataset schema: " + "; ".join(errors))
        columns = payload["columns"]
        return cls(
            numeric=tuple(c["name"] for c in columns if c["kind"] == NUMERIC),
            categorical=tuple(c["name"] for c in columns if c["kind"] == CATEGORICAL),
            target=payload["target"],
            task=payload["task"],
            order=tuple(payload.get("order", ())),
            name=payload.get("name"),
        )

    @classmethod
    def from_json(cls, path: str) -> "DatasetSchema":
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise SchemaError(f"Schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise SchemaError(f"Schema file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(payload)


@dataclass(eq=False)
class TabularDataset:
    """Feature blocks plus target; categoricals stay raw strings until a Vocabulary encodes them."""
    schema: DatasetSchema
    numeric: np.ndarray
    categorical: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        n = len(self.target)
        self.numeric = np.asarray(self.numeric, dtype=np.float64).reshape(n, len(self.schema.numeric))
        self.categorical = np.asarray(self.categorical, dtype=object).reshape(
            n, len(self.schema.categorical)
        )
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.ndim != 1:
            raise DataError(f"Target must be a vector, got shape {self.target.shape}")
        if self.task == "binary" and not np.isin(self.target, (0.0, 1.0)).all():
            raise DataError("Binary targets must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.target)

    @property
    def task(self) -> str:
        return self.schema.task

    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(self.schema, self.numeric[rows], self.categorical[rows], self.target[rows])

    def with_target(self, target: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.schema, self.numeric, self.categorical, target)

    def with_numeric(self, numeric: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.schema, numeric, self.categorical, self.target)

    def to_frame(self) -> pd.DataFrame:
        """Columns in sequence order followed by the target."""
        frame = pd.DataFrame(
            {
                **{n: self.numeric[:, i] for i, n in enumerate(self.schema.numeric)},
                **{n: self.categorical[:, i] for i, n in enumerate(self.schema.categorical)},
            }
        )
        frame = frame[list(self.schema.order)]
        frame[self.schema.target] = self.target
        return frame


def load_csv(path: str, schema: DatasetSchema, require_target: bool = True) -> TabularDataset:
    """Read a headed CSV, dropping rows with any missing value in the used columns.

    With `require_target=False` a missing target column is allowed and filled with zeros.
    """
    try:
        frame = pd.read_csv(path, dtype=str, na_values=MISSING_MARKERS, keep_default_na=True)
    except FileNotFoundError:
        raise DataError(f"Data file not found: {path}") from None
    frame.columns = [c.strip() for c in frame.columns]

    wanted = list(schema.numeric) + list(schema.categorical) + [schema.target]
    has_target = schema.target in frame.columns
    if not has_target and not require_target:
        wanted = wanted[:-1]
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise SchemaError(f"Columns {missing} missing from {path}. Header: {list(frame.columns)}")
    extra = [c for c in frame.columns if c not in wanted]
    if extra:
        logger.debug("Ignoring columns not in schema: %s", extra)

    frame = frame[wanted]
    complete = frame.notna().all(axis=1)
    if not complete.all():
        logger.info("Dropping %d of %d rows with missing values", int((~complete).sum()), len(frame))
    frame = frame[complete]

    numeric = np.empty((len(frame), len(schema.numeric)))
    for j, name in enumerate(schema.numeric):
        numeric[:, j] = _parse_numeric(frame[name], name)

    if schema.categorical:
        categorical = frame[list(schema.categorical)].apply(lambda s: s.str.strip()).to_numpy(dtype=object)
    else:
        categorical = np.empty((len(frame), 0), dtype=object)
    target = _parse_target(frame[schema.target], schema) if has_target else np.zeros(len(frame))
    logger.info("Loaded %d rows, %d features from %s", len(frame), schema.num_features, path)
    return TabularDataset(schema, numeric, categorical, target)


def _parse_numeric(column: pd.Series, name: str) -> np.ndarray:
    parsed = pd.to_numeric(column, errors="coerce")
    bad = parsed.isna()
    if bad.any():
        row = column.index[bad.to_numpy()][0]
        # header is line 1
        raise DataError(f"Unparsable numeric value {column[row]!r} in column {name!r} at line {row + 2}")
    return parsed.to_numpy(dtype=np.float64)


def _parse_target(column: pd.Series, schema: DatasetSchema) -> np.ndarray:
    parsed = pd.to_numeric(column, errors="coerce")
    if schema.task != "binary" or not parsed.isna().any():
        return _parse_numeric(column, schema.target)
    labels = sorted(column.str.strip().unique())
    if len(labels) != 2:
        raise DataError(f"Binary target {schema.target!r} has labels {labels}; expected two")
    logger.info("Mapping binary target labels %s to 0/1", labels)
    return (column.str.strip() == labels[1]).to_numpy(dtype=np.float64)


@dataclass(frozen=True)
class Vocabulary:
    """Per-column category → id maps; id 0 is reserved for the unknown token."""
    tokens: Dict[str, Tuple[str, ...]]

    def size(self, column: str) -> int:
        return len(self.tokens[column]) + 1

    def sizes(self, columns: Sequence[str]) -> List[int]:
        return [self.size(c) for c in columns]

    def mapping(self, column: str) -> Dict[str, int]:
        return {UNKNOWN_TOKEN: 0, **{t: i + 1 for i, t in enumerate(self.tokens[column])}}

    def encode(self, column: str, values) -> np.ndarray:
        lookup = {t: i + 1 for i, t in enumerate(self.tokens[column])}
        return np.array([lookup.get(v, 0) for v in values], dtype=np.int64)

    def encode_dataset(self, dataset: TabularDataset) -> np.ndarray:
        names = dataset.schema.categorical
        ids = np.zeros((dataset.n, len(names)), dtype=np.int64)
        for j, name in enumerate(names):
            ids[:, j] = self.encode(name, dataset.categorical[:, j])
        return ids

    def to_dict(self) -> Dict[str, List[str]]:
        return {k: list(v) for k, v in self.tokens.items()}

    @classmethod
    def from_dict(cls, payload: Dict[str, List[str]]) -> "Vocabulary":
        return cls({k: tuple(v) for k, v in payload.items()})


def build_vocab(train: TabularDataset) -> Vocabulary:
    """Categories in order of first appearance in the training split."""
    tokens = {}
    for j, name in enumerate(train.schema.categorical):
        tokens[name] = tuple(str(v) for v in pd.unique(train.categorical[:, j]))
    return Vocabulary(tokens)


@dataclass(frozen=True)
class TargetScaler:
    """Standardization of a regression target with training statistics (population std)."""
    mean: float
    std: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "TargetScaler":
        y = np.asarray(y, dtype=np.float64)
        std = float(np.std(y))
        if std == 0.0:
            raise DataError("Target has zero standard deviation on the training split")
        return cls(float(np.mean(y)), std)

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std}


def normalize_target(
    train: TabularDataset, *others: TabularDataset
) -> Tuple[List[TabularDataset], TargetScaler]:
    if train.task not in ("regression", "lss"):
        raise DataError(f"Target normalization applies to regression tasks, not {train.task!r}")
    scaler = TargetScaler.fit(train.target)
    return [d.with_target(scaler.transform(d.target)) for d in (train, *others)], scaler


@dataclass(frozen=True)
class NumericScaler:
    """Min-max scaling of numeric features into [-1, 1]."""
    mins: Tuple[float, ...]
    maxs: Tuple[float, ...]

    @classmethod
    def fit(cls, train: TabularDataset) -> "NumericScaler":
        if train.n == 0:
            raise DataError("Cannot fit numeric scaling on an empty split")
        mins, maxs = train.numeric.min(axis=0), train.numeric.max(axis=0)
        for name, lo, hi in zip(train.schema.numeric, mins, maxs):
            if not lo < hi:
                raise DataError(f"Numeric column {name!r} is constant on the training split")
        return cls(tuple(float(v) for v in mins), tuple(float(v) for v in maxs))

    def transform(self, numeric: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.mins), np.asarray(self.maxs)
        return np.clip(2.0 * (numeric - lo) / (hi - lo) - 1.0, -1.0, 1.0)

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mins": list(self.mins), "maxs": list(self.maxs)}


def scale_numeric(
    train: TabularDataset, *others: TabularDataset
) -> Tuple[List[TabularDataset], NumericScaler]:
    scaler = NumericScaler.fit(train)
    return [d.with_numeric(scaler.transform(d.numeric)) for d in (train, *others)], scaler


@dataclass(frozen=True)
class FoldPlan:
    """Shuffled k-fold partition with a validation carve-out per training portion."""
    k: int
    seed: int
    assignments: np.ndarray = field(repr=False)
    val_fraction: float = 0.2

    @property
    def n(self) -> int:
        return len(self.assignments)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_val_indices(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        rest = np.flatnonzero(self.assignments != fold)
        n_val = int(round(self.val_fraction * len(rest)))
        if self.val_fraction > 0 and len(rest) >= 2:
            n_val = min(max(n_val, 1), len(rest) - 1)
        shuffled = make_rng(self.seed, "split", fold).permutation(rest)
        return np.sort(shuffled[n_val:]), np.sort(shuffled[:n_val])


def kfold_split(n: int, k: int = 5, seed: int = 0, val_fraction: float = 0.2) -> FoldPlan:
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    if n < k:
        raise DataError(f"Cannot split {n} rows into {k} folds")
    if not 0.0 <= val_fraction < 1.0:
        raise DataError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    order = make_rng(seed, "split").permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k=k, seed=seed, assignments=assignments, val_fraction=val_fraction)


def reorder_features(dataset: TabularDataset, permutation: Sequence[int]) -> TabularDataset:
    """Permute the sequence order: new position i holds the column previously at permutation[i]."""
    permutation = [int(p) for p in permutation]
    size = dataset.schema.num_features
    if sorted(permutation) != list(range(size)):
        raise DataError(f"Permutation {permutation} is not a bijection on 0..{size - 1}")
    order = tuple(dataset.schema.order[p] for p in permutation)
    schema = DatasetSchema(
        numeric=dataset.schema.numeric,
        categorical=dataset.schema.categorical,
        target=dataset.schema.target,
        task=dataset.schema.task,
        order=order,
        name=dataset.schema.name,
    )
    return TabularDataset(schema, dataset.numeric, dataset.categorical, dataset.target)


def order_permutation(schema: DatasetSchema, names: Sequence[str]) -> List[int]:
    """Permutation that takes `schema.order` to the given name order."""
    index = {n: i for i, n in enumerate(schema.order)}
    missing = [n for n in names if n not in index]
    if missing or len(names) != len(index):
        raise DataError(f"Order {list(names)} does not match columns {list(schema.order)}")
    return [index[n] for n in names]
