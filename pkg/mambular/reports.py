"""Per-fold results, aggregates, comparison and ablation reports, and their JSON schemas."""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from jsonschema import Draft7Validator

from .metrics import LOWER_IS_BETTER, bh_adjust, paired_t_test, unpaired_t_test

logger = logging.getLogger(__name__)

FOLD_COLUMNS = ["dataset", "model", "fold", "metric", "value"]
Q_LEVELS = (0.05, 0.10)
METRIC_PREFERENCE = ("crps", "auc", "mse", "nll")


@dataclass(frozen=True)
class FoldResult:
    """One metric value of one model on one test fold."""
    dataset: str
    model: str
    fold: int
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in LOWER_IS_BETTER:
            raise ValueError(f"Unknown metric: {self.metric}. Available: {list(LOWER_IS_BETTER)}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def folds_frame(results: Iterable[FoldResult]) -> pd.DataFrame:
    frame = pd.DataFrame([r.to_dict() for r in results], columns=FOLD_COLUMNS)
    return frame.sort_values(["dataset", "model", "metric", "fold"], kind="stable").reset_index(drop=True)


def read_folds(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise ValueError(f"Fold results not found: {path}") from None
    missing = [c for c in FOLD_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} lacks columns {missing}")
    return frame[FOLD_COLUMNS]


def write_folds(path: str, results: pd.DataFrame, merge: bool = True) -> pd.DataFrame:
    """Write fold rows, replacing earlier rows of the same (dataset, model) when merging."""
    path = Path(path)
    frame = results[FOLD_COLUMNS]
    if merge and path.exists():
        previous = read_folds(str(path))
        keys = set(zip(frame["dataset"], frame["model"]))
        keep = [(d, m) not in keys for d, m in zip(previous["dataset"], previous["model"])]
        frame = pd.concat([previous[keep], frame], ignore_index=True)
    frame = frame.sort_values(["dataset", "model", "metric", "fold"], kind="stable").reset_index(drop=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame


def aggregate(results) -> pd.DataFrame:
    """Mean and sample standard deviation per (dataset, model, metric)."""
    frame = results if isinstance(results, pd.DataFrame) else folds_frame(results)
    if frame.empty:
        raise ValueError("aggregate needs at least one fold result")
    rows = []
    for (dataset, model, metric), group in frame.groupby(["dataset", "model", "metric"], sort=True):
        values = group.sort_values("fold")["value"].to_numpy(dtype=np.float64)
        note = None
        if values.size == 1:
            std = 0.0
            note = "single fold; std reported as 0"
            warnings.warn(f"{dataset}/{model}/{metric}: {note}", RuntimeWarning)
        else:
            std = float(np.std(values, ddof=1))
        rows.append(
            {
                "dataset": dataset,
                "model": model,
                "metric": metric,
                "mean": float(np.mean(values)),
                "std": std,
                "folds": int(values.size),
                "note": note,
            }
        )
    return pd.DataFrame(rows)


def aggregate_payload(summary: pd.DataFrame) -> Dict[str, Any]:
    entries = []
    for row in summary.to_dict(orient="records"):
        entry = {k: row[k] for k in ("dataset", "model", "metric", "mean", "std", "folds")}
        if isinstance(row.get("note"), str):
            entry["note"] = row["note"]
        entries.append(entry)
    return {"kind": "aggregate", "entries": entries}


def _q_key(q: float) -> str:
    return f"bh_reject_{q:.2f}"


@dataclass
class DatasetComparison:
    dataset: str
    metric: str
    p_value: float
    winner: str
    mean_a: Optional[float] = None
    std_a: Optional[float] = None
    mean_b: Optional[float] = None
    std_b: Optional[float] = None
    p_adjusted: Optional[float] = None
    decisions: Dict[str, bool] = field(default_factory=dict)


@dataclass
class ComparisonReport:
    """Per-dataset p-values with Benjamini-Hochberg decisions at each q level."""
    model_a: str
    model_b: str
    rows: List[DatasetComparison]
    q_levels: Sequence[float] = Q_LEVELS
    test: str = "paired"

    def __post_init__(self):
        adjusted = bh_adjust([r.p_value for r in self.rows]) if self.rows else []
        for row, p_adj in zip(self.rows, adjusted):
            row.p_adjusted = float(p_adj)
            row.decisions = {_q_key(q): bool(p_adj <= q) for q in self.q_levels}

    @classmethod
    def from_pvalues(
        cls, pvalues: Dict[str, float], model_a: str = "a", model_b: str = "b", q_levels=Q_LEVELS
    ) -> "ComparisonReport":
        rows = [DatasetComparison(d, "mse", float(p), "unknown") for d, p in pvalues.items()]
        return cls(model_a, model_b, rows, tuple(q_levels))

    def rejected(self, q: float) -> List[str]:
        return [r.dataset for r in self.rows if r.decisions[_q_key(q)]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "comparison",
            "model_a": self.model_a,
            "model_b": self.model_b,
            "test": self.test,
            "q_levels": list(self.q_levels),
            "rows": [
                {
                    "dataset": r.dataset,
                    "metric": r.metric,
                    "p": r.p_value,
                    "p_adjusted": r.p_adjusted,
                    **r.decisions,
                    "winner": r.winner,
                    "mean_a": r.mean_a,
                    "std_a": r.std_a,
                    "mean_b": r.mean_b,
                    "std_b": r.std_b,
                }
                for r in self.rows
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_frame(self) -> pd.DataFrame:
        """Significance table: dataset, p, one decision column per q level, winner."""
        columns = ["dataset", "p"] + [_q_key(q) for q in self.q_levels] + ["winner"]
        return pd.DataFrame(
            [{"dataset": r.dataset, "p": r.p_value, **r.decisions, "winner": r.winner} for r in self.rows],
            columns=columns,
        )


def _primary_metric(metrics: Iterable[str]) -> str:
    available = set(metrics)
    for metric in METRIC_PREFERENCE:
        if metric in available:
            return metric
    raise ValueError(f"No comparable metric among {sorted(available)}")


def _winner(mean_a: float, mean_b: float, metric: str, model_a: str, model_b: str) -> str:
    if mean_a == mean_b:
        return "tie"
    a_better = mean_a < mean_b if LOWER_IS_BETTER[metric] else mean_a > mean_b
    return model_a if a_better else model_b


def _fold_values(frame: pd.DataFrame, dataset: str, model: str, metric: str) -> pd.Series:
    rows = frame[(frame["dataset"] == dataset) & (frame["model"] == model) & (frame["metric"] == metric)]
    return rows.set_index("fold")["value"].sort_index()


def build_comparison(
    folds_a: pd.DataFrame,
    folds_b: pd.DataFrame,
    model_a: str,
    model_b: str,
    q_levels: Sequence[float] = Q_LEVELS,
    paired: bool = True,
) -> ComparisonReport:
    """Fold-wise t-tests of model_a (from folds_a) against model_b (from folds_b), per dataset."""
    sets_a = set(folds_a.loc[folds_a["model"] == model_a, "dataset"])
    sets_b = set(folds_b.loc[folds_b["model"] == model_b, "dataset"])
    if not sets_a:
        raise ValueError(f"No fold results for model {model_a!r}")
    if not sets_b:
        raise ValueError(f"No fold results for model {model_b!r}")
    if sets_a != sets_b:
        raise ValueError(
            f"Datasets differ: only {model_a}: {sorted(sets_a - sets_b)}, only {model_b}: {sorted(sets_b - sets_a)}"
        )

    rows = []
    for dataset in sorted(sets_a):
        metrics_a = set(folds_a.loc[(folds_a["model"] == model_a) & (folds_a["dataset"] == dataset), "metric"])
        metrics_b = set(folds_b.loc[(folds_b["model"] == model_b) & (folds_b["dataset"] == dataset), "metric"])
        metric = _primary_metric(metrics_a & metrics_b)
        a = _fold_values(folds_a, dataset, model_a, metric)
        b = _fold_values(folds_b, dataset, model_b, metric)
        if list(a.index) != list(b.index):
            raise ValueError(f"Fold mismatch on {dataset}: {list(a.index)} vs {list(b.index)}")
        p = paired_t_test(a.to_numpy(), b.to_numpy()) if paired else unpaired_t_test(a.to_numpy(), b.to_numpy())
        rows.append(
            DatasetComparison(
                dataset=dataset,
                metric=metric,
                p_value=p,
                winner=_winner(float(a.mean()), float(b.mean()), metric, model_a, model_b),
                mean_a=float(a.mean()),
                std_a=float(a.std(ddof=1)) if len(a) > 1 else 0.0,
                mean_b=float(b.mean()),
                std_b=float(b.std(ddof=1)) if len(b) > 1 else 0.0,
            )
        )
        logger.debug("[%s] %s vs %s on %s: p=%.4g", dataset, model_a, model_b, metric, p)
    return ComparisonReport(model_a, model_b, rows, tuple(q_levels), "paired" if paired else "unpaired")


def build_ablation(
    folds: pd.DataFrame,
    reference: str,
    details: Optional[Dict[str, Dict[str, Any]]] = None,
    q_levels: Sequence[float] = Q_LEVELS,
) -> Dict[str, Any]:
    """Each variant (model id) against `reference` on the same folds: raw and BH-adjusted decisions."""
    details = details or {}
    datasets = sorted(set(folds["dataset"]))
    if len(datasets) != 1:
        raise ValueError(f"Ablation expects one dataset, got {datasets}")
    dataset = datasets[0]
    metric = _primary_metric(folds["metric"])
    base = _fold_values(folds, dataset, reference, metric)
    variants = [m for m in dict.fromkeys(folds["model"]) if m != reference]

    entries = [
        {"variant": reference, "mean": float(base.mean()), "std": float(base.std(ddof=1)) if len(base) > 1 else 0.0,
         "p": None, **details.get(reference, {})}
    ]
    pvalues = []
    for variant in variants:
        values = _fold_values(folds, dataset, variant, metric)
        if list(values.index) != list(base.index):
            raise ValueError(f"Fold mismatch between {variant} and {reference}")
        p = paired_t_test(values.to_numpy(), base.to_numpy())
        pvalues.append(p)
        entries.append(
            {
                "variant": variant,
                "mean": float(values.mean()),
                "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                "p": p,
                **details.get(variant, {}),
            }
        )
    adjusted = bh_adjust(pvalues) if pvalues else []
    for entry, p, p_adj in zip(entries[1:], pvalues, adjusted):
        entry["p_adjusted"] = float(p_adj)
        for q in q_levels:
            entry[f"reject_{q:.2f}"] = bool(p <= q)
            entry[_q_key(q)] = bool(p_adj <= q)
    return {"kind": "ablation", "dataset": dataset, "metric": metric, "reference": reference, "entries": entries}


_NUM = {"type": "number"}
_NULLABLE_NUM = {"type": ["number", "null"]}

REPORT_SCHEMAS: Dict[str, Dict[str, Any]] = {
    "aggregate": {
        "$schema": "https://json-schema.org/draft-07/schema#",
        "type": "object",
        "required": ["kind", "entries"],
        "properties": {
            "kind": {"const": "aggregate"},
            "entries": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["dataset", "model", "metric", "mean", "std", "folds"],
                    "properties": {
                        "dataset": {"type": "string"},
                        "model": {"type": "string"},
                        "metric": {"enum": list(LOWER_IS_BETTER)},
                        "mean": _NUM,
                        "std": {"type": "number", "minimum": 0},
                        "folds": {"type": "integer", "minimum": 1},
                        "note": {"type": "string"},
                    },
                },
            },
        },
    },
    "comparison": {
        "$schema": "https://json-schema.org/draft-07/schema#",
        "type": "object",
        "required": ["kind", "model_a", "model_b", "q_levels", "rows"],
        "properties": {
            "kind": {"const": "comparison"},
            "model_a": {"type": "string"},
            "model_b": {"type": "string"},
            "test": {"enum": ["paired", "unpaired"]},
            "q_levels": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
            "rows": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["dataset", "p", "winner"],
                    "properties": {
                        "dataset": {"type": "string"},
                        "metric": {"type": "string"},
                        "p": {"type": "number", "minimum": 0, "maximum": 1},
                        "p_adjusted": _NULLABLE_NUM,
                        "winner": {"type": "string"},
                        "mean_a": _NULLABLE_NUM,
                        "std_a": _NULLABLE_NUM,
                        "mean_b": _NULLABLE_NUM,
                        "std_b": _NULLABLE_NUM,
                    },
                    "patternProperties": {"^bh_reject_": {"type": "boolean"}},
                },
            },
        },
    },
    "ablation": {
        "$schema": "https://json-schema.org/draft-07/schema#",
        "type": "object",
        "required": ["kind", "dataset", "metric", "reference", "entries"],
        "properties": {
            "kind": {"const": "ablation"},
            "dataset": {"type": "string"},
            "metric": {"type": "string"},
            "reference": {"type": "string"},
            "entries": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["variant", "mean", "std", "p"],
                    "properties": {
                        "variant": {"type": "string"},
                        "mean": _NUM,
                        "std": _NUM,
                        "p": _NULLABLE_NUM,
                        "permutation": {"type": "array", "items": {"type": "string"}},
                    },
                },
            },
        },
    },
}


def validate_report(payload: Dict[str, Any], kind: Optional[str] = None) -> List[str]:
    """Validation errors for a report payload; the kind defaults to payload['kind']."""
    kind = kind or (payload.get("kind") if isinstance(payload, dict) else None)
    if kind not in REPORT_SCHEMAS:
        return [f"Unknown report kind: {kind}. Available: {list(REPORT_SCHEMAS.keys())}"]
    validator = Draft7Validator(REPORT_SCHEMAS[kind])
    return [
        f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}"
        for e in sorted(validator.iter_errors(payload), key=lambda e: list(e.path))
    ]


def write_json(path: str, payload: Dict[str, Any]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def write_predictions(path: str, predictions: pd.DataFrame, merge: bool = True) -> pd.DataFrame:
    """Parquet table of out-of-fold predictions, merged the same way as `write_folds`."""
    path = Path(path)
    frame = predictions
    if merge and path.exists():
        previous = pd.read_parquet(path)
        keys = set(zip(frame["dataset"], frame["model"]))
        keep = [(d, m) not in keys for d, m in zip(previous["dataset"], previous["model"])]
        frame = pd.concat([previous[keep], frame], ignore_index=True)
    frame = frame.sort_values(["dataset", "model", "fold", "row"], kind="stable").reset_index(drop=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_parquet(path, index=False)
    return frame
