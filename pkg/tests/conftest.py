import json

import numpy as np
import pytest

from mambular.config import ModelConfig, RunConfig, TrainConfig
from mambular.data import DatasetSchema, TabularDataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(d=8, layers=2, expansion=2, kernel=3, state_dim=4)


def make_mixed_dataset(n=120, seed=0, task="regression"):
    """Two numeric columns and one three-level categorical with a learnable target."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, 2))
    levels = np.array(["red", "green", "blue"], dtype=object)
    cats = levels[np.arange(n) % 3].reshape(n, 1)
    effect = np.array([{"red": -1.0, "green": 0.0, "blue": 1.0}[c] for c in cats[:, 0]])
    signal = x[:, 0] - 0.5 * x[:, 1] ** 2 + effect
    if task == "binary":
        target = (signal > np.median(signal)).astype(float)
    else:
        target = signal + 0.1 * rng.standard_normal(n)
    schema = DatasetSchema(numeric=("x1", "x2"), categorical=("color",), target="y", task=task, name="toy")
    return TabularDataset(schema, x, cats, target)


@pytest.fixture
def mixed_dataset():
    return make_mixed_dataset()


@pytest.fixture
def binary_dataset():
    return make_mixed_dataset(task="binary")


@pytest.fixture
def large_mixed_dataset():
    return make_mixed_dataset(n=1000, seed=1)


@pytest.fixture
def quick_run():
    """A run config small enough to train in seconds."""
    return RunConfig(
        folds=2,
        min_leaf=8,
        model=ModelConfig(d=8, layers=1, state_dim=4, kernel=2),
        train=TrainConfig(lr=1e-2, batch_size=32, max_epochs=2),
    )


@pytest.fixture
def dataset_files(tmp_path, mixed_dataset):
    """schema.json and data.csv for the mixed dataset."""
    schema_path = tmp_path / "schema.json"
    data_path = tmp_path / "data.csv"
    mixed_dataset.schema.to_json(str(schema_path))
    mixed_dataset.to_frame().to_csv(data_path, index=False)
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "d": 8,
                "layers": 1,
                "state_dim": 4,
                "kernel": 2,
                "min_leaf": 8,
                "lr": 0.01,
                "batch_size": 32,
                "max_epochs": 2,
            }
        )
    )
    return {"schema": schema_path, "data": data_path, "config": config_path}
