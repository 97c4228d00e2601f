"""Fold-level experiment pipeline shared by the command-line entry points."""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .baseline import linear_baseline
from .config import ConfigError, ModelConfig, PLEConfig, RunConfig, derive_seed, make_rng
from .data import FoldPlan, TabularDataset, kfold_split, order_permutation, reorder_features
from .encoding import TabularPreprocessor
from .metrics import task_metrics
from .model import MambularModel
from .registry import apply_variant
from .reports import FoldResult
from .train import TrainResult, train

logger = logging.getLogger(__name__)

MODEL_ID = "mambular"
BASELINE_ID = "linear"


def resolve_head(task: str, head: str) -> str:
    """Head implied by the task; regression data may also be fitted distributionally."""
    if task == "binary":
        if head == "lss":
            raise ConfigError("The lss head needs a regression target, not a binary one")
        return "binary"
    if task == "lss":
        if head == "binary":
            raise ConfigError("The binary head needs a binary target")
        return "lss"
    if head == "binary":
        raise ConfigError("The binary head needs a binary target")
    return head


@dataclass
class FoldOutcome:
    fold: int
    results: List[FoldResult]
    predictions: pd.DataFrame
    best_epoch: int


def split_fold(dataset: TabularDataset, plan: FoldPlan, fold: int) -> Tuple[TabularDataset, TabularDataset, TabularDataset]:
    train_rows, val_rows = plan.train_val_indices(fold)
    return dataset.take(train_rows), dataset.take(val_rows), dataset.take(plan.test_indices(fold))


def fit_model(
    train_set: TabularDataset,
    val_set: TabularDataset,
    run: RunConfig,
    model_config: ModelConfig,
    fold: int = 0,
    sequence_order: Optional[Sequence[int]] = None,
) -> Tuple[MambularModel, TabularPreprocessor, TrainResult]:
    """Fit preprocessing on the training rows, then train a model on the encoded splits."""
    model_config = dataclasses.replace(model_config, head=resolve_head(train_set.task, model_config.head))
    ple_config = PLEConfig.for_task(train_set.task, max_bins=model_config.bins, min_leaf=run.min_leaf)
    preprocessor = TabularPreprocessor.fit(train_set, ple_config)
    model = MambularModel(
        model_config,
        n_numeric=len(train_set.schema.numeric),
        category_sizes=preprocessor.category_sizes(),
        feature_order=train_set.schema.feature_order(),
        sequence_order=sequence_order,
        seed=derive_seed(run.seed, "init", fold),
    )
    train_config = dataclasses.replace(run.train, seed=derive_seed(run.seed, "shuffle", fold))
    result = train(model, preprocessor.transform(train_set), preprocessor.transform(val_set), train_config)
    return model, preprocessor, result


def _prediction_frame(dataset_name: str, model_id: str, fold: int, rows: np.ndarray, target: np.ndarray, predictions: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(
        {"dataset": dataset_name, "model": model_id, "fold": fold, "row": rows, "target": target}
    )
    if predictions.ndim == 2:
        frame["prediction"], frame["sigma"] = predictions[:, 0], predictions[:, 1]
    else:
        frame["prediction"] = predictions
    return frame


def run_fold(
    dataset: TabularDataset,
    plan: FoldPlan,
    fold: int,
    run: RunConfig,
    model_config: ModelConfig,
    model_id: str = MODEL_ID,
    sequence_order: Optional[Sequence[int]] = None,
    baseline: bool = False,
) -> FoldOutcome:
    name = dataset.schema.name or "dataset"
    logger.info("[fold %d/%d] %s: training %s", fold + 1, plan.k, name, model_id)
    train_set, val_set, test_set = split_fold(dataset, plan, fold)
    model, preprocessor, result = fit_model(train_set, val_set, run, model_config, fold, sequence_order)

    encoded = preprocessor.transform(test_set)
    predictions = model.predict(encoded.ple, encoded.cat_ids)
    metrics = task_metrics(model.config.head, predictions, encoded.target)
    results = [FoldResult(name, model_id, fold, k, v) for k, v in metrics.items()]
    frames = [_prediction_frame(name, model_id, fold, plan.test_indices(fold), encoded.target, predictions)]

    if baseline:
        fitted = linear_baseline(train_set, model.config.head, preprocessor)
        base_predictions = fitted.predict(test_set)
        for k, v in task_metrics(model.config.head, base_predictions, encoded.target).items():
            results.append(FoldResult(name, BASELINE_ID, fold, k, v))
        frames.append(_prediction_frame(name, BASELINE_ID, fold, plan.test_indices(fold), encoded.target, base_predictions))

    logger.info(
        "[fold %d/%d] %s", fold + 1, plan.k, ", ".join(f"{r.model} {r.metric}={r.value:.5f}" for r in results)
    )
    return FoldOutcome(fold, results, pd.concat(frames, ignore_index=True), result.best_epoch)


def run_cv(
    dataset: TabularDataset,
    run: RunConfig,
    model_config: Optional[ModelConfig] = None,
    model_id: str = MODEL_ID,
    sequence_order: Optional[Sequence[int]] = None,
    baseline: bool = False,
    plan: Optional[FoldPlan] = None,
) -> Tuple[List[FoldResult], pd.DataFrame]:
    """k-fold cross-validation; folds run in parallel when `run.jobs` > 1."""
    model_config = model_config or run.model
    plan = plan or kfold_split(dataset.n, run.folds, run.seed, run.val_fraction)
    args = (run, model_config, model_id, sequence_order, baseline)
    if run.jobs > 1:
        outcomes = Parallel(n_jobs=run.jobs)(
            delayed(run_fold)(dataset, plan, fold, *args) for fold in range(plan.k)
        )
    else:
        outcomes = [run_fold(dataset, plan, fold, *args) for fold in range(plan.k)]
    results = [r for outcome in outcomes for r in outcome.results]
    predictions = pd.concat([o.predictions for o in outcomes], ignore_index=True)
    return results, predictions


def ordering_candidates(dataset: TabularDataset, shuffles: int, seed: int) -> Dict[str, List[str]]:
    """Named column orders: default, flipped, categorical block first, and seeded random shuffles."""
    schema = dataset.schema
    default = list(schema.order)
    candidates = {
        "default": default,
        "flipped": default[::-1],
        "cat-num": [n for n in default if n in schema.categorical] + [n for n in default if n in schema.numeric],
    }
    rng = make_rng(seed, "ordering")
    for i in range(shuffles):
        candidates[f"shuffle-{i + 1}"] = [default[j] for j in rng.permutation(len(default))]
    return candidates


def run_ordering_ablation(
    dataset: TabularDataset, run: RunConfig, mode: str, shuffles: int
) -> Tuple[List[FoldResult], pd.DataFrame, Dict[str, Dict[str, List[str]]]]:
    """Cross-validate each ordering on identical folds, shuffling columns or embeddings."""
    if mode not in ("before-embedding", "after-embedding"):
        raise ConfigError(f"Unknown ordering mode: {mode}. Available: ['before-embedding', 'after-embedding']")
    plan = kfold_split(dataset.n, run.folds, run.seed, run.val_fraction)
    results: List[FoldResult] = []
    frames = []
    details = {}
    for name, order in ordering_candidates(dataset, shuffles, run.seed).items():
        permutation = order_permutation(dataset.schema, order)
        details[name] = {"permutation": order}
        logger.info("[ordering %s] %s", name, " ".join(order))
        if mode == "before-embedding":
            fold_results, predictions = run_cv(reorder_features(dataset, permutation), run, model_id=name, plan=plan)
        else:
            fold_results, predictions = run_cv(dataset, run, model_id=name, sequence_order=permutation, plan=plan)
        results.extend(fold_results)
        frames.append(predictions)
    return results, pd.concat(frames, ignore_index=True), details


def run_architecture_ablation(
    dataset: TabularDataset, run: RunConfig, variants: Sequence[str]
) -> Tuple[List[FoldResult], pd.DataFrame]:
    plan = kfold_split(dataset.n, run.folds, run.seed, run.val_fraction)
    results: List[FoldResult] = []
    frames = []
    for variant in variants:
        config = apply_variant(variant, run.model)
        logger.info("[variant %s] pooling=%s bidirectional=%s interaction=%s arch=%s",
                    variant, config.pooling, config.bidirectional, config.interaction, config.architecture)
        fold_results, predictions = run_cv(dataset, run, model_config=config, model_id=variant, plan=plan)
        results.extend(fold_results)
        frames.append(predictions)
    return results, pd.concat(frames, ignore_index=True)
