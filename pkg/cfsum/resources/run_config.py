import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cfsum.constants import DEFAULT_OUTPUT_DIR, DEFAULT_SALIENCY_THRESHOLD, EVAL_WORKERS_ENV, OUTPUT_DIR_ENV
from cfsum.errors import ConfigError, format_validation_error
from cfsum.tools.data.synth import SynthConfig
from cfsum.tools.model.config import ModelConfig
from cfsum.tools.training.config import TrainConfig


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    threshold: float = DEFAULT_SALIENCY_THRESHOLD
    workers: Optional[int] = Field(None, ge=1)


class DataConfig(BaseModel):
    """Either manifest paths or an inline synthetic-data recipe."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    train_manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    synth: Optional[SynthConfig] = None

    @model_validator(mode="after")
    def _one_source(self):
        has_manifest = self.train_manifest is not None or self.val_manifest is not None
        if has_manifest and self.synth is not None:
            raise ValueError("give either manifest paths or synth, not both")
        if not has_manifest and self.synth is None:
            raise ValueError("give train_manifest or synth")
        if self.val_manifest is not None and self.train_manifest is None:
            raise ValueError("val_manifest needs a train_manifest")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _synth_matches_model(self):
        synth = self.data.synth
        if synth is not None:
            for name in ("d_video", "d_audio", "d_text"):
                if getattr(synth, name) != getattr(self.model, name):
                    raise ValueError(f"data.synth.{name} ({getattr(synth, name)}) differs from model.{name}")
        return self

    def identity(self) -> Dict[str, Any]:
        """The fields that determine a run's results; where it writes and how many threads it uses do not."""
        return self.model_dump(mode="json", exclude={"output_dir": True, "eval": {"workers"}})

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.getenv(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))

    def eval_workers(self) -> int:
        if self.eval.workers is not None:
            return self.eval.workers
        raw = os.getenv(EVAL_WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{EVAL_WORKERS_ENV} must be an integer, got '{raw}'", key_path=EVAL_WORKERS_ENV)
        if workers < 1:
            raise ConfigError(f"{EVAL_WORKERS_ENV} must be at least 1, got {workers}", key_path=EVAL_WORKERS_ENV)
        return workers


def parse_run_config(payload: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise format_validation_error(e)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}", details={"path": str(path)})
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e.msg} (line {e.lineno})", details={"path": str(path)})
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must hold a JSON object", details={"path": str(path)})
    return parse_run_config(payload)


def with_model_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Re-validate the run config with some model fields replaced."""
    payload = cfg.model_dump(mode="json")
    payload["model"].update({k: v for k, v in overrides.items() if v is not None})
    return parse_run_config(payload)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    payload = cfg.model_dump(mode="json")
    payload["model"]["seed"] = seed
    payload["train"]["seed"] = seed
    return parse_run_config(payload)


def config_hash(cfg: BaseModel) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace) of the run-defining fields."""
    payload = cfg.identity() if isinstance(cfg, RunConfig) else cfg.model_dump(mode="json")
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_id(cfg: BaseModel) -> str:
    return config_hash(cfg)[:12]
