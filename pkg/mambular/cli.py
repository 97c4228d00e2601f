"""Command-line entry point: train, cross-validate, ablate, compare, synthesize."""

import functools
import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import pandas as pd

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ARCHITECTURES, HEADS, POOLINGS, ConfigError, RunConfig, load_run_config, replace_model
from .data import DataError, DatasetSchema, SchemaError, TabularDataset, kfold_split, load_csv
from .experiment import (
    MODEL_ID,
    fit_model,
    run_architecture_ablation,
    run_cv,
    run_ordering_ablation,
    split_fold,
)
from .metrics import task_metrics
from .numerics import DimensionError
from .registry import list_variants
from .reports import (
    Q_LEVELS,
    aggregate,
    aggregate_payload,
    build_ablation,
    build_comparison,
    folds_frame,
    read_folds,
    write_folds,
    write_json,
    write_predictions,
)
from .synthetic import generate_synthetic_ordering_dataset
from .train import TrainingError

logger = logging.getLogger(__name__)

# flag name -> RunConfig key
FLAG_KEYS = {
    "schema": "schema",
    "data": "data",
    "out": "out",
    "seed": "seed",
    "folds": "folds",
    "jobs": "jobs",
    "kernel": "kernel",
    "pooling": "pooling",
    "arch": "architecture",
    "head": "head",
    "d": "d",
    "layers": "layers",
    "state_dim": "state_dim",
    "epochs": "max_epochs",
    "batch_size": "batch_size",
    "lr": "lr",
}

FULL_WIDTH = "J"


class KernelSize(click.ParamType):
    """A positive kernel size, or J for one tap per feature."""

    name = "kernel"

    def convert(self, value, param, ctx):
        if isinstance(value, int):
            return value
        if str(value).upper() == FULL_WIDTH:
            return FULL_WIDTH
        try:
            return int(value)
        except ValueError:
            self.fail(f"{value!r} is neither an integer nor {FULL_WIDTH}", param, ctx)


KERNEL = KernelSize()

RUN_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run config."),
    click.option("--data", type=click.Path(dir_okay=False), help="CSV with a header row."),
    click.option("--schema", type=click.Path(dir_okay=False), help="Dataset schema JSON."),
    click.option("--seed", type=int, help="Master seed."),
    click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
    click.option("--folds", type=int, help="Number of cross-validation folds."),
    click.option("--jobs", type=int, help="Folds trained in parallel."),
    click.option("--kernel", type=KERNEL, help="Causal convolution kernel size, or J for the feature count."),
    click.option("--pooling", type=click.Choice(POOLINGS), help="Sequence pooling."),
    click.option("--bidirectional", is_flag=True, help="Add a reversed scan to every block."),
    click.option("--interaction", is_flag=True, help="Learnable feature interaction before the blocks."),
    click.option("--arch", type=click.Choice(ARCHITECTURES), help="Block stack."),
    click.option("--head", type=click.Choice(HEADS), help="Output head."),
    click.option("--d", type=int, help="Embedding width."),
    click.option("--layers", type=int, help="Number of blocks."),
    click.option("--state-dim", type=int, help="SSM state size."),
    click.option("--epochs", type=int, help="Maximum training epochs."),
    click.option("--batch-size", type=int, help="Mini-batch size."),
    click.option("--lr", type=float, help="Initial learning rate."),
]


def run_options(fn):
    for option in reversed(RUN_OPTIONS):
        fn = option(fn)
    return fn


def reports_errors(fn):
    """Config and schema problems exit 2; any other library error exits 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, SchemaError) as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(2)
        except (DataError, TrainingError, CheckpointError, DimensionError, ValueError, RuntimeError, OSError) as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def build_run_config(config_path: Optional[str], bidirectional: bool = False, interaction: bool = False, **flags) -> RunConfig:
    """File values first, then any flag that was given."""
    run = load_run_config(config_path)
    overrides = {FLAG_KEYS[k]: v for k, v in flags.items() if k in FLAG_KEYS}
    if overrides.get("kernel") == FULL_WIDTH:
        # resolved against the dataset by resolve_kernel
        del overrides["kernel"]
    if bidirectional:
        overrides["bidirectional"] = True
    if interaction:
        overrides["interaction"] = True
    return run.with_overrides(**overrides)


def load_dataset(run: RunConfig) -> TabularDataset:
    if not run.schema:
        raise ConfigError("No dataset schema given (--schema or 'schema' in the config)")
    if not run.data:
        raise ConfigError("No data file given (--data or 'data' in the config)")
    schema = DatasetSchema.from_json(run.schema)
    if schema.name is None:
        schema = DatasetSchema(
            schema.numeric, schema.categorical, schema.target, schema.task, schema.order, Path(run.data).stem
        )
    return load_csv(run.data, schema)


def resolve_kernel(run: RunConfig, dataset: TabularDataset, kernel=None) -> RunConfig:
    """`--kernel J` spans every feature of the loaded dataset."""
    if kernel != FULL_WIDTH:
        return run
    width = len(dataset.schema.feature_order())
    logger.info("Kernel J resolves to %d features", width)
    return replace_model(run, kernel=width)


def _echo_written(paths: List[str]) -> None:
    for path in paths:
        click.echo(f"Wrote {path}")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
def cli(verbose: bool):
    """Mambular: sequential state-space models for tabular data."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@run_options
@reports_errors
def train(config_path, **flags):
    """Train on a single split and save the checkpoint and history."""
    run = build_run_config(config_path, **flags)
    dataset = load_dataset(run)
    run = resolve_kernel(run, dataset, flags.get("kernel"))
    plan = kfold_split(dataset.n, run.folds, run.seed, run.val_fraction)
    train_set, val_set, test_set = split_fold(dataset, plan, 0)
    model, preprocessor, result = fit_model(train_set, val_set, run, run.model)

    encoded = preprocessor.transform(test_set)
    metrics = task_metrics(model.config.head, model.predict(encoded.ple, encoded.cat_ids), encoded.target)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    result.history_frame().to_csv(out / "history.csv", index=False)
    written = [
        str(out / "history.csv"),
        save_checkpoint(model, preprocessor, str(out / "checkpoint.bin")),
        write_json(str(out / "metrics.json"), {"best_epoch": result.best_epoch, "test": metrics}),
        write_json(str(out / "config.json"), run.to_dict()),
    ]
    logger.info("Test metrics: %s", ", ".join(f"{k}={v:.5f}" for k, v in metrics.items()))
    _echo_written(written)


@cli.command()
@run_options
@click.option("--baseline", is_flag=True, help="Also evaluate the linear baseline on the same folds.")
@reports_errors
def cv(config_path, baseline, **flags):
    """k-fold cross-validation with per-fold metrics and an aggregate report."""
    run = build_run_config(config_path, **flags)
    dataset = load_dataset(run)
    run = resolve_kernel(run, dataset, flags.get("kernel"))
    results, predictions = run_cv(dataset, run, baseline=baseline)

    out = Path(run.out)
    folds = write_folds(str(out / "folds.csv"), folds_frame(results))
    write_predictions(str(out / "predictions.parquet"), predictions)
    write_json(str(out / "aggregate.json"), aggregate_payload(aggregate(folds)))
    _echo_written([str(out / name) for name in ("folds.csv", "predictions.parquet", "aggregate.json")])


@cli.command("ablate-ordering")
@run_options
@click.option(
    "--mode",
    type=click.Choice(["before-embedding", "after-embedding"]),
    default="before-embedding",
    show_default=True,
    help="Shuffle columns, or shuffle the embedded sequence.",
)
@click.option("--shuffles", type=int, default=0, show_default=True, help="Random permutations beyond the fixed orderings.")
@reports_errors
def ablate_ordering(config_path, mode, shuffles, **flags):
    """Cross-validate column orderings against the default order."""
    run = build_run_config(config_path, **flags)
    if shuffles < 0:
        raise ConfigError(f"--shuffles must be non-negative, got {shuffles}")
    dataset = load_dataset(run)
    run = resolve_kernel(run, dataset, flags.get("kernel"))
    results, predictions, details = run_ordering_ablation(dataset, run, mode, shuffles)

    out = Path(run.out)
    frame = folds_frame(results)
    write_folds(str(out / "folds.csv"), frame, merge=False)
    write_predictions(str(out / "predictions.parquet"), predictions, merge=False)
    report = build_ablation(frame, reference="default", details=details)
    report.update({"mode": mode, "kernel": run.model.kernel, "seed": run.seed})
    _echo_written([write_json(str(out / "ablation.json"), report)])


@cli.command("ablate-architecture")
@run_options
@click.option(
    "--variant",
    "variants",
    multiple=True,
    help=f"Variant to train (repeatable). Default: all of {list_variants()}.",
)
@reports_errors
def ablate_architecture(config_path, variants, **flags):
    """Pooling, bidirectional, interaction and hybrid-stack variants against the default."""
    run = build_run_config(config_path, **flags)
    names = list(dict.fromkeys(["default", *(variants or list_variants())]))
    unknown = [n for n in names if n not in list_variants()]
    if unknown:
        raise ConfigError(f"Unknown variant: {unknown}. Available: {list_variants()}")
    dataset = load_dataset(run)
    run = resolve_kernel(run, dataset, flags.get("kernel"))
    results, predictions = run_architecture_ablation(dataset, run, names)

    out = Path(run.out)
    frame = folds_frame(results)
    write_folds(str(out / "folds.csv"), frame, merge=False)
    write_predictions(str(out / "predictions.parquet"), predictions, merge=False)
    report = build_ablation(frame, reference="default")
    _echo_written([write_json(str(out / "ablation.json"), report)])


def _pick_model(frame: pd.DataFrame, requested: Optional[str], exclude: Optional[str] = None) -> str:
    models = [m for m in dict.fromkeys(frame["model"]) if m != exclude]
    if requested:
        return requested
    if MODEL_ID in models:
        return MODEL_ID
    if len(models) == 1:
        return models[0]
    raise ConfigError(f"Several models in results ({models}); choose one with --model-a/--model-b")


@cli.command()
@click.argument("dir_a", type=click.Path(file_okay=False))
@click.argument("dir_b", required=False, type=click.Path(file_okay=False))
@click.option("--model-a", help="Model id in DIR_A (default: mambular, or the only model).")
@click.option("--model-b", help="Model id in DIR_B (default: the only other model).")
@click.option("--q", "q_levels", type=float, multiple=True, help="FDR levels (repeatable).")
@click.option("--unpaired", is_flag=True, help="Two-sample t-test instead of the paired fold test.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory (default: DIR_A).")
@reports_errors
def compare(dir_a, dir_b, model_a, model_b, q_levels, unpaired, out):
    """Per-dataset t-tests over folds with Benjamini-Hochberg decisions."""
    folds_a = read_folds(str(Path(dir_a) / "folds.csv"))
    folds_b = read_folds(str(Path(dir_b) / "folds.csv")) if dir_b else folds_a
    model_a = _pick_model(folds_a, model_a)
    if dir_b:
        model_b = _pick_model(folds_b, model_b)
    else:
        model_b = _pick_model(folds_b, model_b, exclude=model_a)
    report = build_comparison(folds_a, folds_b, model_a, model_b, q_levels or Q_LEVELS, paired=not unpaired)

    out = Path(out or dir_a)
    out.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(out / "significance.csv", index=False)
    written = [write_json(str(out / "comparison.json"), report.to_dict()), str(out / "significance.csv")]
    for q in report.q_levels:
        click.echo(f"q={q:.2f}: {model_a} vs {model_b} significant on {report.rejected(q) or 'no datasets'}")
    _echo_written(written)


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rows", type=int, default=5000, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="synthetic", show_default=True)
@reports_errors
def synth(seed, rows, out):
    """Write the ordering-sensitivity synthetic dataset, its schema and ground truth."""
    dataset, truth = generate_synthetic_ordering_dataset(seed=seed, n_rows=rows)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(out / "data.csv", index=False)
    (out / "truth.json").write_text(truth.to_json())
    dataset.schema.to_json(str(out / "schema.json"))
    _echo_written([str(out / name) for name in ("data.csv", "truth.json", "schema.json")])


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="predictions.csv", show_default=True)
@click.option("--original-scale", is_flag=True, help="Undo target normalization on regression outputs.")
@reports_errors
def predict(checkpoint_path, data, out, original_scale):
    """Predict new rows with a saved checkpoint."""
    model, preprocessor = load_checkpoint(checkpoint_path)
    dataset = load_csv(data, preprocessor.schema, require_target=False)
    ple, cat_ids = preprocessor.transform_features(dataset)
    predictions = model.predict(ple, cat_ids)
    frame = pd.DataFrame({"prediction": predictions[:, 0] if predictions.ndim == 2 else predictions})
    if predictions.ndim == 2:
        frame["sigma"] = predictions[:, 1]
    if original_scale and preprocessor.target_scaler is not None:
        frame["prediction"] = preprocessor.inverse_target(frame["prediction"].to_numpy())
        if "sigma" in frame:
            frame["sigma"] = frame["sigma"] * preprocessor.target_scaler.std
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    _echo_written([out])


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="mambular", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
