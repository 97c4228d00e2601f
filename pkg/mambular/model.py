"""End-to-end Mambular model: embeddings, block stack, pooling and task heads."""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import numerics as nx
from .blocks import Block, build_block, interaction_apply, uniform_init
from .config import ModelConfig, make_rng
from .numerics import ParamSet, Tensor
from .registry import get_pooling

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class MambularModel:
    """Feature embeddings -> (interaction) -> blocks -> RMSNorm -> pooling -> linear head.

    Inputs are the encoded blocks produced by `TabularPreprocessor`: a PLE
    tensor [N, J_num, bins] and category ids [N, J_cat]. `feature_order` maps
    sequence positions to block indices (numerics first, then categoricals);
    `sequence_order` is an extra permutation applied after embedding.
    """

    def __init__(
        self,
        config: ModelConfig,
        n_numeric: int,
        category_sizes: Sequence[int],
        feature_order: Optional[Sequence[int]] = None,
        sequence_order: Optional[Sequence[int]] = None,
        seed: int = 0,
    ):
        self.config = config
        self.n_numeric = int(n_numeric)
        self.category_sizes = [int(v) for v in category_sizes]
        self.num_features = self.n_numeric + len(self.category_sizes)
        if self.num_features == 0:
            raise ValueError("A model needs at least one feature")
        self.feature_order = list(range(self.num_features)) if feature_order is None else [int(i) for i in feature_order]
        self.sequence_order = None if sequence_order is None else [int(i) for i in sequence_order]
        for name, order in (("feature_order", self.feature_order), ("sequence_order", self.sequence_order)):
            if order is not None and sorted(order) != list(range(self.num_features)):
                raise ValueError(f"{name} {order} is not a permutation of {self.num_features} features")
        self.seed = seed

        d, bins = config.d, config.bins
        rng = make_rng(seed, "init")
        self.params = ParamSet()
        self.num_weight = self.num_bias = None
        if self.n_numeric:
            self.num_weight = self.params.add("embed.num_weight", uniform_init(rng, (self.n_numeric, bins, d), bins))
            self.num_bias = self.params.add("embed.num_bias", uniform_init(rng, (self.n_numeric, d), bins))
        self.cat_tables = [
            self.params.add(f"embed.cat_{j}", uniform_init(rng, (size, d), d))
            for j, size in enumerate(self.category_sizes)
        ]
        self.cls = self.params.add("embed.cls", uniform_init(rng, d, d)) if config.pooling == "cls" else None
        self.interaction = (
            self.params.add("interaction.W", np.eye(self.num_features)) if config.interaction else None
        )
        self.blocks: List[Block] = [
            build_block(kind, self.params, f"blocks.{i}", config, rng)
            for i, kind in enumerate(config.block_kinds())
        ]
        self.final_norm = self.params.add("final_norm.weight", np.ones(d))
        outputs = 2 if config.head == "lss" else 1
        self.head_weight = self.params.add("head.weight", uniform_init(rng, (d, outputs), d))
        self.head_bias = self.params.add("head.bias", np.zeros(outputs))
        self.pooling = get_pooling(config.pooling)
        logger.debug("Built %s model with %d parameters", config.architecture, self.params.num_parameters())

    @property
    def positions(self) -> List[int]:
        """Block index at each sequence position after both orderings."""
        if self.sequence_order is None:
            return list(self.feature_order)
        return [self.feature_order[i] for i in self.sequence_order]

    def embed_features(self, ple: np.ndarray, cat_ids: np.ndarray) -> Tensor:
        """Per-feature embeddings in sequence order, with the cls token appended when pooling is cls."""
        ple = np.asarray(ple, dtype=np.float64)
        cat_ids = np.asarray(cat_ids, dtype=np.int64)
        n = ple.shape[0] if ple.ndim == 3 else cat_ids.shape[0]
        parts = []
        if self.n_numeric:
            if ple.shape[1:] != (self.n_numeric, self.config.bins):
                raise nx.DimensionError(
                    f"PLE block {ple.shape} does not match [N, {self.n_numeric}, {self.config.bins}]"
                )
            projected = nx.transpose(nx.Tensor(ple.transpose(1, 0, 2)) @ self.num_weight, (1, 0, 2))
            parts.append(projected + nx.reshape(self.num_bias, (1, self.n_numeric, self.config.d)))
        for j, table in enumerate(self.cat_tables):
            ids = cat_ids[:, j]
            if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
                raise ValueError(f"Category id out of range for feature {j}: vocabulary size {table.shape[0]}")
            parts.append(nx.reshape(table[ids], (n, 1, self.config.d)))
        z = parts[0] if len(parts) == 1 else nx.concat(parts, axis=1)
        if self.positions != list(range(self.num_features)):
            z = z[:, np.asarray(self.positions), :]
        if self.interaction is not None:
            z = interaction_apply(z, self.interaction)
        if self.cls is not None:
            token = nx.Tensor(np.ones((n, 1, 1))) * nx.reshape(self.cls, (1, 1, self.config.d))
            z = nx.concat([z, token], axis=1)
        return z

    def forward(self, ple: np.ndarray, cat_ids: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Pooled representation [N, d]."""
        z = self.embed_features(ple, cat_ids)
        for block in self.blocks:
            z = block.forward(z, rng)
        z = nx.rmsnorm(z, self.final_norm, self.config.norm_eps)
        return self.pooling(z)

    def outputs(self, ple: np.ndarray, cat_ids: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Raw head outputs [N, 1] (regression, binary logit) or [N, 2] (mu, raw sigma)."""
        return self.forward(ple, cat_ids, rng) @ self.head_weight + self.head_bias

    def predict(self, ple: np.ndarray, cat_ids: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Regression values [N], binary probabilities [N], or lss (mu, sigma) pairs [N, 2]."""
        n = len(ple) if self.n_numeric else len(cat_ids)
        chunks = [
            self.outputs(ple[i:i + batch_size], cat_ids[i:i + batch_size]).data
            for i in range(0, n, batch_size)
        ]
        width = 2 if self.config.head == "lss" else 1
        raw = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, width))
        return transform_outputs(raw, self.config.head)

    def count_parameters(self) -> int:
        return self.params.num_parameters()


def transform_outputs(raw: np.ndarray, head: str) -> np.ndarray:
    if head == "binary":
        return expit(raw[:, 0])
    if head == "lss":
        return np.column_stack([raw[:, 0], nx.softplus_values(raw[:, 1]) + SIGMA_FLOOR])
    return raw[:, 0]


def loss(outputs: Tensor, targets: np.ndarray, head: str) -> Tensor:
    """Mean training loss: squared error, binary cross-entropy on logits, or normal NLL."""
    y = nx.Tensor(np.asarray(targets, dtype=np.float64))
    if outputs.ndim != 2 or outputs.shape[0] != y.shape[0]:
        raise nx.DimensionError(f"Outputs {outputs.shape} do not match {y.shape[0]} targets")
    first = outputs[:, 0]
    if head == "regression":
        residual = first - y
        return nx.reduce_mean(residual * residual)
    if head == "binary":
        return nx.reduce_mean(nx.softplus(first) - y * first)
    if head == "lss":
        sigma = nx.softplus(outputs[:, 1]) + SIGMA_FLOOR
        residual = y - first
        nll = nx.log(sigma) + HALF_LOG_2PI + residual * residual / (2.0 * sigma * sigma)
        return nx.reduce_mean(nll)
    raise ValueError(f"Unknown head: {head}")


def count_parameters(model: MambularModel) -> int:
    return model.count_parameters()
