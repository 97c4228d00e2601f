"""Registries for pooling functions and architecture variants."""

import dataclasses
from typing import Callable, Dict, List

from . import numerics as nx
from .config import ModelConfig
from .numerics import Tensor

Pooling = Callable[[Tensor], Tensor]
Variant = Callable[[ModelConfig], ModelConfig]


# Registry of pooling functions over the feature axis of [N, J, d]
POOLINGS: Dict[str, Pooling] = {}


def register_pooling(name: str, fn: Pooling):
    """Register a new pooling function."""
    POOLINGS[name] = fn


def get_pooling(name: str) -> Pooling:
    """Get a pooling function by name."""
    if name not in POOLINGS:
        raise ValueError(f"Unknown pooling: {name}. Available: {list(POOLINGS.keys())}")
    return POOLINGS[name]


def _last_position(z: Tensor) -> Tensor:
    return z[:, -1, :]


register_pooling("avg", lambda z: nx.reduce_mean(z, axis=1))
register_pooling("sum", lambda z: nx.reduce_sum(z, axis=1))
register_pooling("max", lambda z: nx.reduce_max(z, axis=1))
register_pooling("last", _last_position)
# the cls token is appended at the end of the sequence
register_pooling("cls", _last_position)


# Registry of named architecture variants used by the ablation harness
VARIANTS: Dict[str, Variant] = {}


def register_variant(name: str, fn: Variant):
    """Register a config transform under a variant name."""
    VARIANTS[name] = fn


def get_variant(name: str) -> Variant:
    if name not in VARIANTS:
        raise ValueError(f"Unknown variant: {name}. Available: {list(VARIANTS.keys())}")
    return VARIANTS[name]


def apply_variant(name: str, config: ModelConfig) -> ModelConfig:
    return get_variant(name)(config)


def list_variants() -> List[str]:
    return list(VARIANTS.keys())


def _mambattention(config: ModelConfig) -> ModelConfig:
    # Mamba first and last needs an odd layer count
    layers = max(3, config.layers + (config.layers + 1) % 2)
    return dataclasses.replace(config, architecture="mambattention", layers=layers)


register_variant("default", lambda c: c)
for _pooling in ("last", "sum", "max", "cls"):
    register_variant(_pooling, lambda c, p=_pooling: dataclasses.replace(c, pooling=p))
register_variant("bidirectional", lambda c: dataclasses.replace(c, bidirectional=True))
register_variant("interaction", lambda c: dataclasses.replace(c, interaction=True))
register_variant("mambattention", _mambattention)
