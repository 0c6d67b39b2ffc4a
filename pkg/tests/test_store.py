import numpy as np
import pytest

from cfsum.constants import CHECKPOINT_CONFIG_ENTRY
from cfsum.errors import ContainerFormatError
from cfsum.tools.data.container import read_container, write_container
from cfsum.tools.model.forward import predict_scores
from cfsum.tools.model.gradcheck import tiny_config
from cfsum.tools.model.model import init_model
from cfsum.tools.store.checkpoint import canonical_json, load_checkpoint, save_checkpoint
from cfsum.tools.store.results import MetricsLog, read_metrics_log
from cfsum.tools.training.trainer import EpochRecord

from conftest import make_sample


def test_checkpoint_round_trip(tmp_path, rng):
    model = init_model(tiny_config(seed=6, interaction_weights_learnable=False))
    path = save_checkpoint(tmp_path / "ckpt.cfst", model)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.names() == model.names()
    assert loaded.trainable == model.trainable
    sample = make_sample(rng)
    np.testing.assert_array_equal(predict_scores(sample, loaded), predict_scores(sample, model))


def test_checkpoint_header_comes_first(tmp_path, tiny_model):
    entries = read_container(save_checkpoint(tmp_path / "ckpt.cfst", tiny_model))
    assert next(iter(entries)) == CHECKPOINT_CONFIG_ENTRY
    assert entries[CHECKPOINT_CONFIG_ENTRY].tobytes().decode("utf-8") == canonical_json(
        tiny_model.config.model_dump(mode="json")
    )


def test_checkpoint_without_header(tmp_path):
    path = write_container(tmp_path / "bare.cfst", {"head.w": np.zeros((8, 1))})
    with pytest.raises(ContainerFormatError):
        load_checkpoint(path)


def test_checkpoint_with_wrong_shape(tmp_path, tiny_model):
    entries = read_container(save_checkpoint(tmp_path / "ckpt.cfst", tiny_model))
    entries["head.w"] = np.zeros((4, 1))
    entries[CHECKPOINT_CONFIG_ENTRY] = entries[CHECKPOINT_CONFIG_ENTRY].tobytes()
    write_container(tmp_path / "broken.cfst", entries)
    with pytest.raises(ContainerFormatError, match="head.w"):
        load_checkpoint(tmp_path / "broken.cfst")


def test_checkpoint_with_extra_entry(tmp_path, tiny_model):
    entries = read_container(save_checkpoint(tmp_path / "ckpt.cfst", tiny_model))
    entries[CHECKPOINT_CONFIG_ENTRY] = entries[CHECKPOINT_CONFIG_ENTRY].tobytes()
    entries["stray"] = np.ones(1)
    write_container(tmp_path / "extra.cfst", entries)
    with pytest.raises(ContainerFormatError, match="stray"):
        load_checkpoint(tmp_path / "extra.cfst")


def test_metrics_log_appends_tagged_lines(tmp_path):
    path = tmp_path / "logs" / "metrics.jsonl"
    log = MetricsLog(path, "abc", seed=3)
    log(EpochRecord(0, 0.5))
    log(EpochRecord(1, 0.25, val_map=0.75, val_hit1=1.0))
    lines = read_metrics_log(path)
    assert [line["epoch"] for line in lines] == [0, 1]
    assert lines[0] == {"epoch": 0, "train_loss": 0.5, "val_map": None, "val_hit1": None, "config_hash": "abc", "seed": 3}

    MetricsLog(path, "abc", seed=3)
    assert read_metrics_log(path) == []
