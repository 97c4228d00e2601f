"""Sequential state-space models for tabular data."""

from .baseline import LinearBaseline, linear_baseline
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, PLEConfig, RunConfig, TrainConfig, load_run_config
from .data import DataError, DatasetSchema, SchemaError, TabularDataset, kfold_split, load_csv
from .encoding import EncodedBatch, TabularPreprocessor, fit_tree_bins, ple_encode
from .metrics import auc, bh_adjust, benjamini_hochberg, crps_normal, mse, paired_t_test
from .model import MambularModel, count_parameters
from .registry import apply_variant, get_pooling, get_variant, list_variants
from .reports import ComparisonReport, aggregate, build_ablation, build_comparison
from .synthetic import generate_synthetic_ordering_dataset
from .train import TrainingError, train

__all__ = [
    "LinearBaseline",
    "linear_baseline",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "ModelConfig",
    "PLEConfig",
    "RunConfig",
    "TrainConfig",
    "load_run_config",
    "DataError",
    "DatasetSchema",
    "SchemaError",
    "TabularDataset",
    "kfold_split",
    "load_csv",
    "EncodedBatch",
    "TabularPreprocessor",
    "fit_tree_bins",
    "ple_encode",
    "auc",
    "bh_adjust",
    "benjamini_hochberg",
    "crps_normal",
    "mse",
    "paired_t_test",
    "MambularModel",
    "count_parameters",
    "apply_variant",
    "get_pooling",
    "get_variant",
    "list_variants",
    "ComparisonReport",
    "aggregate",
    "build_ablation",
    "build_comparison",
    "generate_synthetic_ordering_dataset",
    "TrainingError",
    "train",
]
