import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mambular.config import ModelConfig, PLEConfig, TrainConfig
from mambular.encoding import EncodedBatch, TabularPreprocessor
from mambular.model import MambularModel
from mambular.train import (
    HISTORY_COLUMNS,
    AdamState,
    TrainingError,
    TrainState,
    adamw_step,
    evaluate_loss,
    train,
)


class TestAdamwStep:
    def test_first_step_moves_by_lr_times_sign(self):
        out = adamw_step({"w": np.array([1.0, 1.0])}, {"w": np.array([0.5, -2.0])}, AdamState(), 0.1, 0.0)
        assert_allclose(out["w"], [0.9, 1.1], atol=1e-7)

    def test_decoupled_weight_decay(self):
        out = adamw_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, AdamState(), 0.1, 0.01)
        assert_allclose(out["w"], [2.0 - 0.1 * 0.01 * 2.0])

    def test_bias_correction_on_second_step(self):
        state = AdamState()
        params = {"w": np.array([0.0])}
        params = adamw_step(params, {"w": np.array([1.0])}, state, 0.01, 0.0)
        params = adamw_step(params, {"w": np.array([1.0])}, state, 0.01, 0.0)
        assert state.t == 2
        # constant gradients keep the corrected step at one
        assert_allclose(params["w"], [-0.02], atol=1e-8)

    def test_moments(self):
        state = AdamState()
        adamw_step({"w": np.array([0.0])}, {"w": np.array([2.0])}, state, 0.01, 0.0)
        assert_allclose(state.m["w"], [0.2])
        assert_allclose(state.v["w"], [0.004])


class TestTrainState:
    def test_early_stop_after_patience(self):
        state = TrainState(lr=1.0, lr_patience=100, early_stop_patience=3)
        stops = [state.record(v, dict) for v in [1.0, 2.0, 2.0, 2.0]]
        assert stops == [False, False, False, True]
        assert state.epoch == 4 and state.best_epoch == 1

    def test_plateau_drops_lr_and_resets(self):
        state = TrainState(lr=1.0, lr_factor=0.1, lr_patience=2, early_stop_patience=10)
        lrs = []
        for v in [1.0, 1.0, 1.0, 1.0, 1.0]:
            state.record(v, dict)
            lrs.append(state.lr)
        assert_allclose(lrs, [1.0, 1.0, 0.1, 0.1, 0.01])

    def test_early_stop_counter_survives_lr_drop(self):
        state = TrainState(lr=1.0, lr_patience=2, early_stop_patience=5)
        stops = [state.record(v, dict) for v in [1.0] + [1.5] * 5]
        assert stops[-1] is True
        assert state.epochs_since_improvement == 5

    def test_improvement_resets_both_counters(self):
        state = TrainState(lr=1.0, lr_patience=3, early_stop_patience=3)
        for v in [1.0, 2.0, 2.0, 0.5]:
            state.record(v, lambda: {"epoch": state.epoch})
        assert state.epochs_since_improvement == 0
        assert state.plateau_count == 0
        assert state.best_epoch == 4
        assert state.best_params == {"epoch": 4}

    def test_tolerance(self):
        state = TrainState(lr=1.0, tol=1e-3)
        state.record(1.0, dict)
        state.record(1.0 - 1e-4, dict)
        assert state.best_epoch == 1


@pytest.fixture
def batches(mixed_dataset):
    train_set, val_set = mixed_dataset.take(np.arange(90)), mixed_dataset.take(np.arange(90, 120))
    pre = TabularPreprocessor.fit(train_set, PLEConfig(max_bins=8, min_leaf=8))
    return pre, pre.transform(train_set), pre.transform(val_set)


def build_model(pre, config, seed=0):
    return MambularModel(config, len(pre.bins), pre.category_sizes(), pre.schema.feature_order(), seed=seed)


class TestTrain:
    def test_loss_decreases(self, batches):
        pre, train_batch, val_batch = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        before = evaluate_loss(model, train_batch)
        result = train(model, train_batch, val_batch, TrainConfig(lr=1e-2, batch_size=32, max_epochs=8))
        assert len(result.history) == 8
        assert result.history[-1]["train_loss"] < before
        assert list(result.history_frame().columns) == HISTORY_COLUMNS

    def test_restores_best_snapshot(self, batches):
        pre, train_batch, val_batch = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        result = train(model, train_batch, val_batch, TrainConfig(lr=5e-2, batch_size=32, max_epochs=6))
        best = min(h["val_loss"] for h in result.history)
        assert result.best_val_loss == best
        assert evaluate_loss(model, val_batch) == pytest.approx(best, rel=1e-12)

    def test_deterministic(self, batches):
        pre, train_batch, val_batch = batches
        config = TrainConfig(lr=1e-2, batch_size=32, max_epochs=2, seed=4)
        runs = []
        for _ in range(2):
            model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2), seed=1)
            runs.append(train(model, train_batch, val_batch, config).history)
        assert runs[0] == runs[1]

    def test_zero_epochs_keeps_initial_weights(self, batches):
        pre, train_batch, val_batch = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        before = model.params.state_dict()
        result = train(model, train_batch, val_batch, TrainConfig(max_epochs=0))
        assert result.history == []
        assert result.best_epoch == 0 and math.isinf(result.best_val_loss)
        for name, value in before.items():
            assert_array_equal(model.params[name].data, value)

    def test_without_validation_monitors_training(self, batches, caplog):
        pre, train_batch, _ = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        result = train(model, train_batch, None, TrainConfig(lr=1e-2, batch_size=64, max_epochs=1))
        assert len(result.history) == 1
        assert "monitoring the training loss" in caplog.text

    def test_empty_training_split(self, batches):
        pre, _, val_batch = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        empty = val_batch.take(np.arange(0))
        with pytest.raises(TrainingError, match="empty"):
            train(model, empty, val_batch, TrainConfig(max_epochs=1))

    def test_divergence_is_reported(self, batches):
        pre, train_batch, val_batch = batches
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2))
        broken = EncodedBatch(train_batch.ple, train_batch.cat_ids, np.full(train_batch.n, np.nan))
        with pytest.raises(TrainingError, match="Non-finite"):
            train(model, broken, val_batch, TrainConfig(max_epochs=1))

    def test_binary_head(self, binary_dataset):
        pre = TabularPreprocessor.fit(binary_dataset, PLEConfig.for_task("binary", 8, 8))
        batch = pre.transform(binary_dataset)
        model = build_model(pre, ModelConfig(d=8, layers=1, state_dim=4, kernel=2, head="binary"))
        result = train(model, batch, batch, TrainConfig(lr=1e-2, batch_size=32, max_epochs=3))
        assert result.history[0]["val_loss"] < 1.0
