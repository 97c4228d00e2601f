import pytest
from numpy.testing import assert_array_equal

from mambular.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from mambular.config import ModelConfig, PLEConfig
from mambular.encoding import TabularPreprocessor
from mambular.model import MambularModel


@pytest.fixture
def fitted(mixed_dataset):
    pre = TabularPreprocessor.fit(mixed_dataset, PLEConfig(max_bins=8, min_leaf=8))
    config = ModelConfig(d=8, layers=2, state_dim=4, kernel=2, bidirectional=True)
    model = MambularModel(config, len(pre.bins), pre.category_sizes(), pre.schema.feature_order(),
                          sequence_order=[1, 2, 0], seed=5)
    return model, pre


@pytest.fixture
def saved(tmp_path, fitted):
    model, pre = fitted
    return save_checkpoint(model, pre, str(tmp_path / "ckpt" / "model.bin"))


class TestCheckpoint:
    def test_round_trip_is_bit_identical(self, saved, fitted):
        model, _ = fitted
        restored, _ = load_checkpoint(saved)
        assert list(restored.params) == list(model.params)
        for name in model.params:
            assert_array_equal(restored.params[name].data, model.params[name].data)
        assert restored.config == model.config
        assert restored.sequence_order == [1, 2, 0]

    def test_predictions_survive(self, saved, fitted, mixed_dataset):
        model, pre = fitted
        restored, restored_pre = load_checkpoint(saved)
        a = pre.transform(mixed_dataset)
        b = restored_pre.transform(mixed_dataset)
        assert_array_equal(model.predict(a.ple, a.cat_ids), restored.predict(b.ple, b.cat_ids))

    def test_predictions_survive_at_scale(self, tmp_path, large_mixed_dataset):
        pre = TabularPreprocessor.fit(large_mixed_dataset, PLEConfig(max_bins=16, min_leaf=32))
        config = ModelConfig(d=16, layers=2, state_dim=8, kernel=3, interaction=True)
        model = MambularModel(config, len(pre.bins), pre.category_sizes(), pre.schema.feature_order(), seed=9)
        path = save_checkpoint(model, pre, str(tmp_path / "model.bin"))
        restored, restored_pre = load_checkpoint(path)
        a = pre.transform(large_mixed_dataset)
        b = restored_pre.transform(large_mixed_dataset)
        assert_array_equal(a.ple, b.ple)
        predictions = model.predict(a.ple, a.cat_ids)
        assert predictions.shape == (1000,)
        assert_array_equal(predictions, restored.predict(b.ple, b.cat_ids))

    def test_starts_with_magic(self, saved):
        with open(saved, "rb") as handle:
            assert handle.read(4) == MAGIC

    def test_flipped_byte_is_detected(self, saved):
        with open(saved, "rb") as handle:
            data = bytearray(handle.read())
        data[len(data) // 2] ^= 0xFF
        with open(saved, "wb") as handle:
            handle.write(bytes(data))
        with pytest.raises(CheckpointError, match="Checksum"):
            load_checkpoint(saved)

    def test_truncation_is_detected(self, saved):
        with open(saved, "rb") as handle:
            data = handle.read()
        with open(saved, "wb") as handle:
            handle.write(data[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(saved)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"PK\x03\x04" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(str(path))

    def test_unsupported_version(self, saved):
        with open(saved, "rb") as handle:
            data = bytearray(handle.read())
        data[4] = 9
        with open(saved, "wb") as handle:
            handle.write(bytes(data))
        with pytest.raises(CheckpointError, match="version 9"):
            load_checkpoint(saved)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(str(tmp_path / "absent.bin"))
