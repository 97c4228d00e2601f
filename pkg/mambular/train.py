"""Training loop: AdamW, plateau learning-rate decay, early stopping on validation loss."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from . import numerics as nx
from .config import TrainConfig, make_rng
from .encoding import EncodedBatch
from .model import MambularModel, loss
from .numerics import ParamSet

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""


@dataclass
class AdamState:
    """First/second moments per parameter and the step count."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: Dict[str, np.ndarray],
    gradients: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam step with decoupled weight decay; returns new parameter values."""
    state.t += 1
    correction1 = 1.0 - BETA1 ** state.t
    correction2 = 1.0 - BETA2 ** state.t
    updated = {}
    for name, theta in params.items():
        g = gradients[name]
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        state.m[name], state.v[name] = m, v
        step = (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        updated[name] = theta - lr * weight_decay * theta - lr * step
    return updated


class AdamW:
    """Optimizer over a ParamSet; reads `.grad` and replaces `.data`."""

    def __init__(self, params: ParamSet, weight_decay: float):
        self.params = params
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self, lr: float) -> None:
        values = {name: p.data for name, p in self.params.items()}
        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }
        for name, value in adamw_step(values, grads, self.state, lr, self.weight_decay).items():
            self.params[name].data = value


@dataclass
class TrainState:
    """Scheduler and early-stopping bookkeeping.

    The plateau counter resets when the learning rate drops; the early-stop
    counter only resets on improvement.
    """
    lr: float
    lr_factor: float = 0.1
    lr_patience: int = 10
    early_stop_patience: int = 15
    tol: float = 1e-8
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    plateau_count: int = 0
    best_params: Optional[Dict[str, np.ndarray]] = None

    @classmethod
    def from_config(cls, config: TrainConfig) -> "TrainState":
        return cls(
            lr=config.lr,
            lr_factor=config.lr_factor,
            lr_patience=config.lr_patience,
            early_stop_patience=config.early_stop_patience,
            tol=config.improvement_tol,
        )

    def record(self, val_loss: float, snapshot: Callable[[], Dict[str, np.ndarray]]) -> bool:
        """Register one epoch's validation loss; True means stop."""
        self.epoch += 1
        if val_loss < self.best_val_loss - self.tol:
            self.best_val_loss = val_loss
            self.best_epoch = self.epoch
            self.best_params = snapshot()
            self.epochs_since_improvement = 0
            self.plateau_count = 0
            return False
        self.epochs_since_improvement += 1
        self.plateau_count += 1
        if self.plateau_count >= self.lr_patience:
            self.lr *= self.lr_factor
            self.plateau_count = 0
            logger.info("[epoch %d] validation plateau, lr -> %g", self.epoch, self.lr)
        return self.epochs_since_improvement >= self.early_stop_patience


@dataclass
class TrainResult:
    model: MambularModel
    history: List[Dict[str, float]]
    best_epoch: int
    best_val_loss: float

    def history_frame(self) -> pd.DataFrame:
        return history_frame(self.history)


def history_frame(history: List[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(history, columns=HISTORY_COLUMNS)


def evaluate_loss(model: MambularModel, batch: EncodedBatch, batch_size: int = 512) -> float:
    """Row-weighted mean loss without dropout."""
    total = 0.0
    for start in range(0, batch.n, batch_size):
        part = batch.take(np.arange(start, min(start + batch_size, batch.n)))
        value = loss(model.outputs(part.ple, part.cat_ids), part.target, model.config.head)
        total += value.item() * part.n
    return total / batch.n


def train(
    model: MambularModel,
    train_batch: EncodedBatch,
    val_batch: Optional[EncodedBatch],
    config: TrainConfig,
) -> TrainResult:
    """Fit `model` in place and restore the best-validation snapshot."""
    if train_batch.n == 0:
        raise TrainingError("Training split is empty")
    monitor = val_batch if val_batch is not None and val_batch.n else train_batch
    if monitor is train_batch:
        logger.warning("No validation rows; monitoring the training loss instead")

    params = model.params
    optimizer = AdamW(params, config.weight_decay)
    state = TrainState.from_config(config)
    shuffle_rng = make_rng(config.seed, "shuffle")
    dropout_rng = make_rng(config.seed, "dropout")
    history: List[Dict[str, float]] = []

    for epoch in range(1, config.max_epochs + 1):
        lr = state.lr
        order = shuffle_rng.permutation(train_batch.n)
        total = 0.0
        for index, start in enumerate(range(0, train_batch.n, config.batch_size)):
            part = train_batch.take(order[start:start + config.batch_size])
            value = loss(model.outputs(part.ple, part.cat_ids, dropout_rng), part.target, model.config.head)
            if not np.isfinite(value.item()):
                raise TrainingError(f"Non-finite training loss at epoch {epoch}, batch {index}")
            params.zero_grad()
            nx.backward(value)
            optimizer.step(lr)
            total += value.item() * part.n

        train_loss = total / train_batch.n
        val_loss = evaluate_loss(model, monitor)
        if not np.isfinite(val_loss):
            raise TrainingError(f"Non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        logger.info("[epoch %d] train %.5f val %.5f lr %g", epoch, train_loss, val_loss, lr)
        if state.record(val_loss, params.state_dict):
            logger.info("[epoch %d] early stop; best epoch %d", epoch, state.best_epoch)
            break

    if state.best_params is not None:
        params.load_state_dict(state.best_params)
    return TrainResult(model, history, state.best_epoch, state.best_val_loss)

