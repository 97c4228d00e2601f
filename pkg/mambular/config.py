"""Configuration dataclasses, run-config validation and seed streams."""

import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from jsonschema import Draft7Validator

logger = logging.getLogger(__name__)

POOLINGS = ("avg", "sum", "max", "last", "cls")
ARCHITECTURES = ("mambular", "mambattention")
HEADS = ("regression", "binary", "lss")
TASKS = ("regression", "binary", "lss")

SEED_STREAMS = ("split", "init", "shuffle", "dropout", "synth", "ordering")


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""


def derive_seed(seed: int, stream: str, *keys: int) -> int:
    """Child seed for a named sub-stream of a root seed."""
    if stream not in SEED_STREAMS:
        raise ConfigError(f"Unknown seed stream: {stream}. Available: {list(SEED_STREAMS)}")
    entropy = [int(seed), zlib.crc32(stream.encode("utf-8")), *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream, *keys))


def _from_dict(cls, payload: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {unknown}. Available: {sorted(known)}")
    return cls(**payload)


@dataclass(frozen=True)
class PLEConfig:
    """Decision-tree binning for piecewise-linear encoding."""
    max_bins: int = 64
    min_leaf: int = 64
    criterion: str = "squared_error"  # or "gini"

    def __post_init__(self):
        if self.max_bins < 2:
            raise ConfigError(f"max_bins must be at least 2, got {self.max_bins}")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be positive, got {self.min_leaf}")
        if self.criterion not in ("squared_error", "gini"):
            raise ConfigError(f"Unknown tree criterion: {self.criterion}")

    @classmethod
    def for_task(cls, task: str, max_bins: int, min_leaf: int = 64) -> "PLEConfig":
        criterion = "gini" if task == "binary" else "squared_error"
        return cls(max_bins=max_bins, min_leaf=min_leaf, criterion=criterion)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "PLEConfig":
        return _from_dict(cls, payload)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches and sizes; defaults follow the reference Mambular setup."""
    d: int = 64
    layers: int = 4
    expansion: int = 2
    kernel: int = 4
    state_dim: int = 128
    pooling: str = "avg"
    bidirectional: bool = False
    interaction: bool = False
    architecture: str = "mambular"
    head: str = "regression"
    max_bins: Optional[int] = None
    dropout: float = 0.0
    dt_rank: Optional[int] = None
    norm_eps: float = 1e-5
    attention_heads: int = 8
    ff_dim: int = 256
    attention_dropout: float = 0.2
    ff_dropout: float = 0.1

    def __post_init__(self):
        for name in ("d", "layers", "expansion", "kernel", "state_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"Unknown pooling: {self.pooling}. Available: {list(POOLINGS)}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"Unknown architecture: {self.architecture}. Available: {list(ARCHITECTURES)}"
            )
        if self.head not in HEADS:
            raise ConfigError(f"Unknown head: {self.head}. Available: {list(HEADS)}")
        if self.max_bins is not None and self.max_bins < 2:
            raise ConfigError(f"max_bins must be at least 2, got {self.max_bins}")
        if self.dt_rank is not None and self.dt_rank < 1:
            raise ConfigError(f"dt_rank must be positive, got {self.dt_rank}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.norm_eps <= 0:
            raise ConfigError(f"norm_eps must be positive, got {self.norm_eps}")
        if self.architecture == "mambattention":
            if self.layers < 3 or self.layers % 2 == 0:
                raise ConfigError(
                    f"mambattention needs an odd layer count >= 3 (Mamba first and last), "
                    f"got {self.layers}"
                )
            if self.d % self.attention_heads:
                raise ConfigError(
                    f"d={self.d} is not divisible by attention_heads={self.attention_heads}"
                )

    @property
    def inner_dim(self) -> int:
        return self.expansion * self.d

    @property
    def bins(self) -> int:
        return self.max_bins if self.max_bins is not None else self.d

    @property
    def delta_rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else math.ceil(self.d / 16)

    def block_kinds(self) -> list:
        """Block layout, e.g. ['mamba', 'attention', 'mamba'] for a 3-layer mambattention."""
        if self.architecture == "mambular":
            return ["mamba"] * self.layers
        return ["mamba" if i % 2 == 0 else "attention" for i in range(self.layers)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ModelConfig":
        return _from_dict(cls, payload)


@dataclass(frozen=True)
class TrainConfig:
    """Shared training protocol."""
    lr: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 128
    max_epochs: int = 200
    early_stop_patience: int = 15
    lr_factor: float = 0.1
    lr_patience: int = 10
    seed: int = 0
    improvement_tol: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0 or self.lr_factor <= 0:
            raise ConfigError("lr and lr_factor must be positive and weight_decay non-negative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be non-negative, got {self.max_epochs}")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ConfigError("patience values must be positive integers")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TrainConfig":
        return _from_dict(cls, payload)


_NUMBER = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        # run
        "schema": {"type": "string"},
        "data": {"type": "string"},
        "out": {"type": "string"},
        "seed": {**_INT, "minimum": 0},
        "folds": {**_INT, "minimum": 2},
        "val_fraction": {**_NUMBER, "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "min_leaf": {**_INT, "minimum": 1},
        "jobs": {**_INT, "minimum": 1},
        # model
        "d": {**_INT, "minimum": 1},
        "layers": {**_INT, "minimum": 1},
        "expansion": {**_INT, "minimum": 1},
        "kernel": {**_INT, "minimum": 1},
        "state_dim": {**_INT, "minimum": 1},
        "pooling": {"enum": list(POOLINGS)},
        "bidirectional": _BOOL,
        "interaction": _BOOL,
        "architecture": {"enum": list(ARCHITECTURES)},
        "head": {"enum": list(HEADS)},
        "max_bins": {"type": ["integer", "null"], "minimum": 2},
        "dropout": {**_NUMBER, "minimum": 0, "exclusiveMaximum": 1},
        "dt_rank": {"type": ["integer", "null"], "minimum": 1},
        "norm_eps": {**_NUMBER, "exclusiveMinimum": 0},
        "attention_heads": {**_INT, "minimum": 1},
        "ff_dim": {**_INT, "minimum": 1},
        "attention_dropout": {**_NUMBER, "minimum": 0, "exclusiveMaximum": 1},
        "ff_dropout": {**_NUMBER, "minimum": 0, "exclusiveMaximum": 1},
        # train
        "lr": {**_NUMBER, "exclusiveMinimum": 0},
        "weight_decay": {**_NUMBER, "minimum": 0},
        "batch_size": {**_INT, "minimum": 1},
        "max_epochs": {**_INT, "minimum": 0},
        "early_stop_patience": {**_INT, "minimum": 1},
        "lr_factor": {**_NUMBER, "exclusiveMinimum": 0},
        "lr_patience": {**_INT, "minimum": 1},
        "improvement_tol": {**_NUMBER, "minimum": 0},
    },
}

_RUN_KEYS = ("schema", "data", "out", "seed", "folds", "val_fraction", "min_leaf", "jobs")
_MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


def validate_config_payload(payload: Dict[str, Any]) -> list:
    """Return a list of error messages for a flat run-config dict."""
    validator = Draft7Validator(RUN_CONFIG_SCHEMA)
    return [
        f"{'.'.join(str(p) for p in err.path) or '<root>'}: {err.message}"
        for err in sorted(validator.iter_errors(payload), key=lambda e: list(e.path))
    ]


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs, merged from file and flags."""
    schema: Optional[str] = None
    data: Optional[str] = None
    out: str = "results"
    seed: int = 0
    folds: int = 5
    val_fraction: float = 0.2
    min_leaf: int = 64
    jobs: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Any]:
        """Flat key set, the same shape accepted by `from_dict`."""
        payload = {key: getattr(self, key) for key in _RUN_KEYS}
        payload.update(self.model.to_dict())
        payload.update({k: v for k, v in self.train.to_dict().items() if k != "seed"})
        return {k: v for k, v in payload.items() if v is not None}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunConfig":
        errors = validate_config_payload(payload)
        if errors:
            raise ConfigError("Invalid run config: " + "; ".join(errors))
        run = {k: payload[k] for k in _RUN_KEYS if k in payload}
        model = {k: payload[k] for k in _MODEL_KEYS if k in payload}
        train = {k: payload[k] for k in _TRAIN_KEYS if k in payload}
        train["seed"] = run.get("seed", 0)
        return cls(model=ModelConfig(**model), train=TrainConfig(**train), **run)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply flag values; None means 'not given'."""
        given = {k: v for k, v in overrides.items() if v is not None}
        if not given:
            return self
        merged = self.to_dict()
        merged.update(given)
        return RunConfig.from_dict(merged)


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    config = RunConfig.from_dict(payload)
    logger.debug("Loaded run config from %s", path)
    return config


def replace_model(config: RunConfig, **changes) -> RunConfig:
    return replace(config, model=replace(config.model, **changes))
