"""Target-aware bin discovery and piecewise-linear encoding of numeric features.

Bins come from a single-feature CART grown best-first: at every step the leaf
whose best split yields the largest impurity decrease is split, until the bin
cap is reached or no leaf can be split with both children holding at least
`min_leaf` rows. Thresholds are midpoints between adjacent distinct values.

The outer edges of each feature are its training minimum and maximum; inputs
are clamped into that range before encoding, so the encoding of value x over
edges b_0 < ... < b_T has component t equal to 1 when x >= b_t, 0 when
x < b_{t-1}, and (x - b_{t-1}) / (b_t - b_{t-1}) otherwise.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .config import PLEConfig
from .data import (
    DatasetSchema,
    NumericScaler,
    TabularDataset,
    TargetScaler,
    Vocabulary,
    build_vocab,
)

logger = logging.getLogger(__name__)

MIN_GAIN = 1e-12


@dataclass(frozen=True)
class BinBoundaries:
    """Sorted bin edges of one numeric feature, outer edges included."""
    edges: Tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) < 2:
            raise ValueError("A feature needs at least two bin edges")
        interior = np.asarray(self.edges)
        if np.any(np.diff(interior) < 0) or np.any(np.diff(interior[1:-1]) <= 0):
            raise ValueError(f"Bin edges must be increasing: {self.edges}")

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def splits(self) -> Tuple[float, ...]:
        return self.edges[1:-1]


def _impurity(count: np.ndarray, total: np.ndarray, total_sq: np.ndarray, criterion: str) -> np.ndarray:
    """Count-weighted node impurity from sufficient statistics."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if criterion == "gini":
            # n * (1 - p^2 - (1-p)^2) with p = positives / n
            pos, neg = total, count - total
            value = count - (pos * pos + neg * neg) / count
        else:
            value = total_sq - total * total / count
    return np.where(count > 0, value, 0.0)


def _best_split(xs: np.ndarray, ys: np.ndarray, start: int, stop: int, min_leaf: int, criterion: str):
    """Best split of sorted rows [start, stop): (gain, cut index, threshold) or None."""
    n = stop - start
    if n < 2 * min_leaf:
        return None
    x, y = xs[start:stop], ys[start:stop]
    cum = np.cumsum(y)
    cum_sq = np.cumsum(y * y)
    parent = _impurity(np.array(n, dtype=float), cum[-1], cum_sq[-1], criterion)

    # a cut at i puts rows [0, i) left
    cuts = np.arange(min_leaf, n - min_leaf + 1)
    cuts = cuts[x[cuts - 1] < x[cuts]]
    if cuts.size == 0:
        return None
    left = _impurity(cuts.astype(float), cum[cuts - 1], cum_sq[cuts - 1], criterion)
    right = _impurity((n - cuts).astype(float), cum[-1] - cum[cuts - 1], cum_sq[-1] - cum_sq[cuts - 1], criterion)
    children = left + right
    best = int(np.argmin(children))
    gain = float(parent - children[best])
    if gain <= MIN_GAIN * max(1.0, abs(float(parent))):
        return None
    cut = int(cuts[best])
    return gain, start + cut, 0.5 * (x[cut - 1] + x[cut])


def fit_tree_bins(x: np.ndarray, y: np.ndarray, config: PLEConfig) -> BinBoundaries:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise ValueError(f"fit_tree_bins needs matching 1-d columns, got {x.shape} and {y.shape}")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order] if config.criterion == "gini" else y[order] - y.mean()
    lo, hi = float(xs[0]), float(xs[-1])
    if lo == hi:
        return BinBoundaries((lo, hi))

    # leaves as (start, stop) ranges over the sorted rows
    leaves = [(0, len(xs))]
    candidates = {leaves[0]: _best_split(xs, ys, 0, len(xs), config.min_leaf, config.criterion)}
    thresholds: List[float] = []
    while len(leaves) < config.max_bins:
        ranked = [(c[0], -leaf[0], leaf) for leaf, c in candidates.items() if c is not None]
        if not ranked:
            break
        _, _, leaf = max(ranked)
        _, cut, threshold = candidates.pop(leaf)
        leaves.remove(leaf)
        thresholds.append(float(threshold))
        for child in ((leaf[0], cut), (cut, leaf[1])):
            leaves.append(child)
            candidates[child] = _best_split(xs, ys, child[0], child[1], config.min_leaf, config.criterion)

    return BinBoundaries((lo, *sorted(thresholds), hi))


def ple_encode(x: float, bins: BinBoundaries, width: Optional[int] = None) -> np.ndarray:
    """Encoding of one value, zero-padded to `width` components."""
    return ple_encode_column(np.array([x], dtype=np.float64), bins, width)[0]


def ple_encode_column(x: np.ndarray, bins: BinBoundaries, width: Optional[int] = None) -> np.ndarray:
    width = bins.n_bins if width is None else width
    if width < bins.n_bins:
        raise ValueError(f"Encoding width {width} is smaller than the {bins.n_bins} fitted bins")
    edges = np.asarray(bins.edges)
    lo, hi = edges[:-1], edges[1:]
    x = np.asarray(x, dtype=np.float64)[:, None]
    span = hi - lo
    frac = np.divide(x - lo, span, out=np.zeros((x.shape[0], span.size)), where=span > 0)
    encoded = np.where(x >= hi, 1.0, np.where(x < lo, 0.0, frac))
    out = np.zeros((x.shape[0], width))
    out[:, : bins.n_bins] = encoded
    return out


@dataclass(eq=False)
class EncodedBatch:
    """Model-ready arrays: PLE block [n, J_num, bins], category ids [n, J_cat], target [n]."""
    ple: np.ndarray
    cat_ids: np.ndarray
    target: np.ndarray

    @property
    def n(self) -> int:
        return len(self.target)

    def take(self, rows) -> "EncodedBatch":
        rows = np.asarray(rows)
        return EncodedBatch(self.ple[rows], self.cat_ids[rows], self.target[rows])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ple": self.ple.tolist(),
            "cat_ids": self.cat_ids.tolist(),
            "target": self.target.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "EncodedBatch":
        return cls(
            np.asarray(payload["ple"], dtype=np.float64),
            np.asarray(payload["cat_ids"], dtype=np.int64),
            np.asarray(payload["target"], dtype=np.float64),
        )


class TabularPreprocessor:
    """Training-split statistics: numeric scaling, PLE bins, vocabularies, target scaling."""

    def __init__(
        self,
        schema: DatasetSchema,
        ple_config: PLEConfig,
        numeric_scaler: NumericScaler,
        bins: Sequence[BinBoundaries],
        vocabulary: Vocabulary,
        target_scaler: Optional[TargetScaler] = None,
    ):
        self.schema = schema
        self.ple_config = ple_config
        self.numeric_scaler = numeric_scaler
        self.bins = list(bins)
        self.vocabulary = vocabulary
        self.target_scaler = target_scaler

    @classmethod
    def fit(cls, train: TabularDataset, ple_config: PLEConfig, n_jobs: int = 1) -> "TabularPreprocessor":
        numeric_scaler = NumericScaler.fit(train) if train.schema.numeric else NumericScaler((), ())
        scaled = numeric_scaler.transform(train.numeric) if train.schema.numeric else train.numeric
        target_scaler = TargetScaler.fit(train.target) if train.task in ("regression", "lss") else None
        y = target_scaler.transform(train.target) if target_scaler else train.target
        bins = Parallel(n_jobs=n_jobs)(
            delayed(fit_tree_bins)(scaled[:, j], y, ple_config) for j in range(scaled.shape[1])
        )
        for name, b in zip(train.schema.numeric, bins):
            logger.debug("PLE bins for %s: %d", name, b.n_bins)
        return cls(train.schema, ple_config, numeric_scaler, bins, build_vocab(train), target_scaler)

    @property
    def width(self) -> int:
        return self.ple_config.max_bins

    def category_sizes(self) -> List[int]:
        return self.vocabulary.sizes(self.schema.categorical)

    def transform_features(self, dataset: TabularDataset) -> Tuple[np.ndarray, np.ndarray]:
        if dataset.schema.numeric != self.schema.numeric or dataset.schema.categorical != self.schema.categorical:
            raise ValueError("Dataset columns do not match the fitted preprocessor")
        n = dataset.n
        ple = np.zeros((n, len(self.bins), self.width))
        if self.bins:
            scaled = self.numeric_scaler.transform(dataset.numeric)
            for j, b in enumerate(self.bins):
                ple[:, j, :] = ple_encode_column(scaled[:, j], b, self.width)
        return ple, self.vocabulary.encode_dataset(dataset)

    def transform(self, dataset: TabularDataset) -> EncodedBatch:
        ple, cat_ids = self.transform_features(dataset)
        target = self.target_scaler.transform(dataset.target) if self.target_scaler else dataset.target
        return EncodedBatch(ple, cat_ids, np.asarray(target, dtype=np.float64))

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        return self.target_scaler.inverse(y) if self.target_scaler else np.asarray(y)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": self.schema.to_dict(),
            "ple_config": self.ple_config.to_dict(),
            "numeric_scaler": self.numeric_scaler.to_dict(),
            "bins": [list(b.edges) for b in self.bins],
            "vocabulary": self.vocabulary.to_dict(),
            "target_scaler": self.target_scaler.to_dict() if self.target_scaler else None,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TabularPreprocessor":
        scaler = payload["numeric_scaler"]
        target = payload["target_scaler"]
        return cls(
            schema=DatasetSchema.from_dict(payload["schema"]),
            ple_config=PLEConfig.from_dict(payload["ple_config"]),
            numeric_scaler=NumericScaler(tuple(scaler["mins"]), tuple(scaler["maxs"])),
            bins=[BinBoundaries(tuple(e)) for e in payload["bins"]],
            vocabulary=Vocabulary.from_dict(payload["vocabulary"]),
            target_scaler=TargetScaler(**target) if target else None,
        )


def fit_transform_pipeline(
    train: TabularDataset, ple_config: PLEConfig, *others: TabularDataset
) -> Tuple[TabularPreprocessor, List[EncodedBatch]]:
    """Fit on `train`, then encode it and every other split."""
    preprocessor = TabularPreprocessor.fit(train, ple_config)
    return preprocessor, [preprocessor.transform(d) for d in (train, *others)]
