import json
import logging

import pytest

from cfsum.constants import (
    ABLATION_REPORT_FILE,
    CHECKPOINT_FILE,
    EVAL_REPORT_FILE,
    HISTORY_FILE,
    METRICS_LOG_FILE,
    TRAIN_REPORT_FILE,
)
from cfsum.errors import ConfigError
from cfsum.log_config import resolve_log_level
from cfsum.main import main
from cfsum.resources.experiment import modality_override
from cfsum.resources.run_config import load_run_config
from cfsum.tools.store.results import read_metrics_log

from conftest import CONFIG_DIR


@pytest.fixture(autouse=True)
def quiet_logs(monkeypatch):
    monkeypatch.setenv("CFSUM_LOG", "quiet")


def test_synth_refuses_non_empty_directory(tiny_run_config, tmp_path):
    config = tiny_run_config()
    out = tmp_path / "data"
    assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "train.jsonl").is_file()
    assert main(["synth", "--config", str(config), "--out", str(out)]) == 2
    assert main(["synth", "--config", str(config), "--out", str(out), "--force"]) == 0


def test_synth_is_deterministic(tiny_run_config, tmp_path):
    config = tiny_run_config()
    for name in ("a", "b"):
        assert main(["synth", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "train.jsonl").read_bytes() == (tmp_path / "b" / "train.jsonl").read_bytes()
    assert (tmp_path / "a" / "concepts.cfst").read_bytes() == (tmp_path / "b" / "concepts.cfst").read_bytes()


def test_train_writes_artifacts(tiny_run_config, tmp_path, capsys):
    config = tiny_run_config()
    assert main(["train", "--config", str(config)]) == 0
    out = tmp_path / "out"
    for name in (CHECKPOINT_FILE, METRICS_LOG_FILE, HISTORY_FILE, TRAIN_REPORT_FILE):
        assert (out / name).is_file(), name
    lines = read_metrics_log(out / METRICS_LOG_FILE)
    assert [line["epoch"] for line in lines] == [0, 1]
    assert len({line["config_hash"] for line in lines}) == 1
    report = json.loads((out / TRAIN_REPORT_FILE).read_text())
    assert report["epochs"] == 2
    assert "checkpoint:" in capsys.readouterr().out


def test_eval_is_repeatable(tiny_run_config, tmp_path, capsys):
    config = tiny_run_config(train={"learning_rate": 0.0})
    assert main(["train", "--config", str(config)]) == 0
    report_path = tmp_path / "out" / EVAL_REPORT_FILE
    assert main(["eval", "--config", str(config)]) == 0
    first = report_path.read_bytes()
    assert main(["eval", "--config", str(config)]) == 0
    assert report_path.read_bytes() == first
    assert json.loads(first)["split"] == "val"
    assert "mAP" in capsys.readouterr().out


def test_predict_prints_one_row_per_clip(tiny_run_config, tmp_path, capsys):
    config = tiny_run_config()
    assert main(["train", "--config", str(config)]) == 0
    capsys.readouterr()
    out = tmp_path / "out"
    manifest = out / "data" / "val.jsonl"
    sample_id = json.loads(manifest.read_text().splitlines()[0])["sample_id"]
    assert main(["predict", "--checkpoint", str(out / CHECKPOINT_FILE), "--manifest", str(manifest), "--sample", sample_id]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    n_clips = len(json.loads(manifest.read_text().splitlines()[0])["labels"])
    assert rows[0].split() == ["clip", "score", "label", "valid"]
    assert len(rows) == n_clips + 1


def test_predict_unknown_sample(tiny_run_config, tmp_path):
    config = tiny_run_config(train={"epochs": 1})
    assert main(["train", "--config", str(config)]) == 0
    out = tmp_path / "out"
    args = ["predict", "--checkpoint", str(out / CHECKPOINT_FILE), "--manifest", str(out / "data" / "val.jsonl")]
    assert main(args + ["--sample", "missing"]) == 1


def test_params_agree_with_closed_form(tiny_run_config, capsys):
    assert main(["params", "--config", str(tiny_run_config())]) == 0
    lines = capsys.readouterr().out.splitlines()
    total = next(line for line in lines if line.startswith("total:")).split(":")[1].strip()
    closed = next(line for line in lines if line.startswith("closed form:")).split(":")[1].strip()
    assert total == closed


def test_params_shrink_without_audio_and_text(tiny_run_config, capsys):
    config = str(tiny_run_config())

    def total(*flags):
        assert main(["params", "--config", config, *flags]) == 0
        lines = capsys.readouterr().out.splitlines()
        return int(next(line for line in lines if line.startswith("total:")).split(":")[1])

    assert total("--modalities", "v") < total()


def test_gradcheck_passes():
    assert main(["gradcheck", "--seed", "7"]) == 0


def test_unknown_config_key_exits_with_config_error(tiny_run_config, capsys):
    config = tiny_run_config(model={"d_modle": 8})
    assert main(["train", "--config", str(config)]) == 2
    assert "model.d_modle" in capsys.readouterr().err


def test_invalid_json_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["train", "--config", str(path)]) == 2


def test_train_video_only(tiny_run_config, tmp_path):
    config = tiny_run_config()
    assert main(["train", "--config", str(config), "--modalities", "v"]) == 0
    report = json.loads((tmp_path / "out" / TRAIN_REPORT_FILE).read_text())
    assert report["config"]["model"]["enabled_modalities"] == ["video"]


def test_bad_modality_letter(tiny_run_config):
    assert main(["train", "--config", str(tiny_run_config()), "--modalities", "vx"]) == 2


def test_ablate_writes_summary(tiny_run_config, tmp_path, capsys):
    config = tiny_run_config(train={"epochs": 1})
    assert main(["ablate", "--config", str(config), "--rows", "v", "full", "--seeds", "0", "1"]) == 0
    payload = json.loads((tmp_path / "out" / ABLATION_REPORT_FILE).read_text())
    assert len(payload["runs"]) == 4
    assert set(payload["summary"]) == {"v", "full"}
    assert payload["summary"]["v"]["seeds"] == 2
    assert payload["summary"]["v"]["parameters"] < payload["summary"]["full"]["parameters"]


ABLATION_DIRECTION_MODEL = {"d_video": 16, "d_audio": 16, "d_text": 16, "d_model": 16, "n_heads": 2, "ffn_hidden": 32}
ABLATION_DIRECTION_SYNTH = {
    "n_samples": 120,
    "val_fraction": 0.25,
    "n_concepts": 6,
    "d_video": 16,
    "d_audio": 16,
    "d_text": 16,
    "min_clips": 8,
    "max_clips": 12,
    "min_tokens": 1,
    "max_tokens": 4,
    "min_query_concepts": 1,
    "max_query_concepts": 3,
    "noise_sigma": 0.3,
    "audio_informative_fraction": 1.0,
}


@pytest.fixture(scope="module")
def ablation_summary(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    payload = json.loads((CONFIG_DIR / "tiny_run.json").read_text(encoding="utf-8"))
    payload["output_dir"] = str(root / "out")
    payload["model"].update(ABLATION_DIRECTION_MODEL)
    payload["train"].update({"epochs": 25, "learning_rate": 3e-3})
    payload["data"]["synth"].update(ABLATION_DIRECTION_SYNTH)
    config = root / "run.json"
    config.write_text(json.dumps(payload), encoding="utf-8")
    rows = ["v", "vt", "vat", "full", "no-fusion", "no-interaction"]
    with pytest.MonkeyPatch.context() as patch:
        patch.setenv("CFSUM_LOG", "quiet")
        assert main(["ablate", "--config", str(config), "--rows", *rows, "--seeds", "0", "1", "2"]) == 0
    report = json.loads((root / "out" / ABLATION_REPORT_FILE).read_text(encoding="utf-8"))
    return {row: values["map"] for row, values in report["summary"].items()}


@pytest.mark.slow
@pytest.mark.parametrize("better,worse", [("vat", "vt"), ("vt", "v"), ("full", "no-fusion")])
def test_ablation_direction(ablation_summary, better, worse):
    assert ablation_summary[better] >= ablation_summary[worse] + 0.02, ablation_summary


@pytest.mark.slow
@pytest.mark.xfail(
    strict=False,
    reason="clip queries over text keys and values give every clip a mixture of text rows; "
    "a single-token query makes all clip scores equal, which the bypassed head does not suffer",
)
def test_ablation_direction_without_interaction(ablation_summary):
    assert ablation_summary["full"] >= ablation_summary["no-interaction"] + 0.02, ablation_summary


def test_output_dir_from_environment(tiny_run_config, tmp_path, monkeypatch):
    config = tiny_run_config()
    payload = json.loads(config.read_text())
    del payload["output_dir"]
    config.write_text(json.dumps(payload))
    monkeypatch.setenv("CFSUM_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert load_run_config(config).resolved_output_dir() == tmp_path / "elsewhere"


def test_log_levels():
    assert resolve_log_level("quiet") == logging.WARNING
    assert resolve_log_level("DEBUG") == logging.DEBUG
    assert resolve_log_level("bogus") == logging.INFO


def test_train_and_eval_are_byte_identical_across_output_dirs(tiny_run_config, tmp_path):
    runs = []
    for name in ("first", "second"):
        config = tiny_run_config(name=f"{name}.json", output_dir=str(tmp_path / name), eval={"workers": 1 if name == "first" else 3})
        assert main(["train", "--config", str(config)]) == 0
        assert main(["eval", "--config", str(config)]) == 0
        runs.append(tmp_path / name)
    for artifact in (CHECKPOINT_FILE, METRICS_LOG_FILE, HISTORY_FILE, TRAIN_REPORT_FILE, EVAL_REPORT_FILE):
        assert (runs[0] / artifact).read_bytes() == (runs[1] / artifact).read_bytes(), artifact


def test_changed_synth_recipe_regenerates_data(tiny_run_config, tmp_path):
    config = tiny_run_config(train={"epochs": 1})
    assert main(["train", "--config", str(config)]) == 0
    manifest = tmp_path / "out" / "data" / "train.jsonl"
    first = manifest.read_bytes()

    assert main(["train", "--config", str(config)]) == 0
    assert manifest.read_bytes() == first

    payload = json.loads(config.read_text())
    payload["data"]["synth"].update(n_samples=15, seed=99)
    config.write_text(json.dumps(payload))
    assert main(["train", "--config", str(config)]) == 0
    train_lines = manifest.read_text().splitlines()
    val_lines = (tmp_path / "out" / "data" / "val.jsonl").read_text().splitlines()
    assert len(train_lines) + len(val_lines) == 15
    features = list((tmp_path / "out" / "data" / "features").iterdir())
    assert len(features) == 15 * 3


def test_modality_letters_map_to_names():
    assert modality_override("tv") == ["text", "video"]
    assert modality_override(None) is None
    with pytest.raises(ConfigError):
        modality_override("vx")
