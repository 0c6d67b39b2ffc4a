"""
Experiment commands: train, eval, predict, ablate and params.

Handlers raise CFSumError subclasses and return the text to print; artifacts are
written under the run's output directory.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import structlog

from cfsum.constants import (
    ABLATION_REPORT_FILE,
    CHECKPOINT_FILE,
    EVAL_REPORT_FILE,
    HISTORY_FILE,
    METRICS_LOG_FILE,
    TRAIN_REPORT_FILE,
)
from cfsum.errors import ConfigError
from cfsum.log_config import bind_run
from cfsum.resources.dataset import load_run_datasets
from cfsum.resources.run_config import RunConfig, config_hash, load_run_config, with_model_overrides, with_seed
from cfsum.tools.data.manifest import load_manifest, load_sample
from cfsum.tools.evaluation.evaluate import evaluate
from cfsum.tools.model.config import Modality
from cfsum.tools.model.forward import predict_scores
from cfsum.tools.model.model import closed_form_param_count, count_params, init_model, param_breakdown
from cfsum.tools.store.checkpoint import load_checkpoint, save_checkpoint
from cfsum.tools.store.results import MetricsLog, write_frame, write_json
from cfsum.tools.training.trainer import train

logger = structlog.get_logger(__name__)

_LETTERS = {"v": Modality.video, "a": Modality.audio, "t": Modality.text}

ABLATION_ROWS: Dict[str, dict] = {
    "v": {"enabled_modalities": ["video"]},
    "vt": {"enabled_modalities": ["video", "text"]},
    "va": {"enabled_modalities": ["video", "audio"]},
    "vat": {"enabled_modalities": ["video", "audio", "text"]},
    "full": {},
    "no-autoencoder": {"use_autoencoder": False},
    "no-fusion": {"use_fusion": False},
    "no-interaction": {"use_interaction": False},
}


def modality_override(letters: Optional[str]) -> Optional[List[str]]:
    """'vat' -> ['video', 'audio', 'text']; None passes through."""
    if letters is None:
        return None
    try:
        return [_LETTERS[c].value for c in letters.lower()]
    except KeyError as e:
        raise ConfigError(f"unknown modality letter {e.args[0]!r} in '{letters}'", key_path="modalities")


def ablation_overrides(
    modalities: Optional[str] = None,
    no_autoencoder: bool = False,
    no_fusion: bool = False,
    no_interaction: bool = False,
) -> dict:
    return {
        "enabled_modalities": modality_override(modalities),
        "use_autoencoder": False if no_autoencoder else None,
        "use_fusion": False if no_fusion else None,
        "use_interaction": False if no_interaction else None,
    }


def prepare_run(config: Union[str, Path], command: str, **model_overrides) -> Tuple[RunConfig, str, Path]:
    """Load and validate the config, bind the run id to the log context, create the output directory."""
    cfg = load_run_config(config)
    if any(v is not None for v in model_overrides.values()):
        cfg = with_model_overrides(cfg, **model_overrides)
    digest = config_hash(cfg)
    bind_run(digest[:12], command=command, seed=cfg.train.seed)
    out_dir = cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Run prepared", output_dir=str(out_dir), config_hash=digest)
    return cfg, digest, out_dir


def cmd_train(config: Union[str, Path], **ablation) -> str:
    cfg, digest, out_dir = prepare_run(config, "train", **ablation_overrides(**ablation))
    train_set, val_set = load_run_datasets(cfg, out_dir)
    model = init_model(cfg.model)
    metrics_log = MetricsLog(out_dir / METRICS_LOG_FILE, digest, cfg.train.seed)
    result = train(
        train_set,
        model,
        cfg.train,
        val_dataset=val_set or None,
        threshold=cfg.eval.threshold,
        on_epoch=metrics_log,
        workers=cfg.eval_workers(),
    )

    save_checkpoint(out_dir / CHECKPOINT_FILE, result.model)
    write_frame(out_dir / HISTORY_FILE, result.to_frame())
    last = result.history[-1]
    write_json(
        out_dir / TRAIN_REPORT_FILE,
        {
            "config": cfg.identity(),
            "config_hash": digest,
            "seed": cfg.train.seed,
            "parameters": count_params(result.model),
            "epochs": len(result.history),
            "final_train_loss": last.train_loss,
            "val_map": last.val_map,
            "val_hit1": last.val_hit1,
        },
    )
    summary = f"trained {len(result.history)} epochs, final train loss {last.train_loss:.6f}"
    if last.val_map is not None:
        summary += f", val mAP {last.val_map:.4f}, val HIT@1 {last.val_hit1:.4f}"
    return f"{summary}\ncheckpoint: {out_dir / CHECKPOINT_FILE}"


def cmd_eval(config: Union[str, Path], checkpoint: Optional[Union[str, Path]] = None) -> str:
    """Evaluate a checkpoint on the validation split (the training split when there is none)."""
    cfg, digest, out_dir = prepare_run(config, "eval")
    checkpoint = Path(checkpoint) if checkpoint else out_dir / CHECKPOINT_FILE
    model = load_checkpoint(checkpoint)
    train_set, val_set = load_run_datasets(cfg, out_dir)
    split = "val" if val_set else "train"
    report = evaluate(model, val_set or train_set, cfg.eval.threshold, cfg.eval_workers())
    write_json(out_dir / EVAL_REPORT_FILE, {**report.to_dict(), "config_hash": digest, "split": split})
    return report.render_table()


def cmd_predict(checkpoint: Union[str, Path], manifest: Union[str, Path], sample_id: str) -> str:
    model = load_checkpoint(checkpoint)
    dataset = load_manifest(manifest)
    sample = load_sample(dataset.get(sample_id), dataset.root)
    scores = predict_scores(sample, model)
    frame = pd.DataFrame(
        {
            "clip": range(sample.n_clips),
            "score": scores,
            "label": sample.saliency,
            "valid": sample.clip_mask.valid,
        }
    )
    logger.info("Prediction done", sample_id=sample_id, clips=sample.n_clips)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6f}")


def cmd_ablate(config: Union[str, Path], seeds: Sequence[int] = (0,), rows: Optional[Sequence[str]] = None) -> str:
    """Train and evaluate every ablation row for every seed; identical configurations are trained once."""
    cfg, digest, out_dir = prepare_run(config, "ablate")
    rows = list(rows or ABLATION_ROWS)
    unknown = [r for r in rows if r not in ABLATION_ROWS]
    if unknown:
        raise ConfigError(f"unknown ablation rows {unknown}", key_path="rows", details={"known": list(ABLATION_ROWS)})
    train_set, val_set = load_run_datasets(cfg, out_dir)
    eval_set = val_set or train_set
    workers = cfg.eval_workers()

    runs, cache = [], {}
    for row in rows:
        for seed in seeds:
            row_cfg = with_seed(with_model_overrides(cfg, **ABLATION_ROWS[row]), seed)
            key = config_hash(row_cfg)
            if key not in cache:
                logger.info("Ablation run started", row=row, seed=seed)
                result = train(train_set, init_model(row_cfg.model), row_cfg.train)
                report = evaluate(result.model, eval_set, row_cfg.eval.threshold, workers)
                cache[key] = {
                    "map": report.map,
                    "hit_at_1": report.hit_at_1,
                    "final_train_loss": result.final_loss,
                    "parameters": count_params(result.model),
                }
            runs.append({"row": row, "seed": seed, "config_hash": key, **cache[key]})

    frame = pd.DataFrame(runs)
    summary = frame.groupby("row", sort=False).agg(
        map=("map", "mean"),
        hit_at_1=("hit_at_1", "mean"),
        final_train_loss=("final_train_loss", "mean"),
        parameters=("parameters", "first"),
        seeds=("seed", "count"),
    )
    write_json(
        out_dir / ABLATION_REPORT_FILE,
        {
            "config_hash": digest,
            "seeds": list(seeds),
            "runs": runs,
            "summary": {
                str(row): {k: (int(v) if k in ("parameters", "seeds") else float(v)) for k, v in values.items()}
                for row, values in summary.to_dict(orient="index").items()
            },
        },
    )
    return summary.to_string(float_format=lambda v: f"{v:.4f}")


def cmd_params(config: Union[str, Path], **ablation) -> str:
    cfg, _, _ = prepare_run(config, "params", **ablation_overrides(**ablation))
    model = init_model(cfg.model)
    breakdown = param_breakdown(model)
    total, closed = count_params(model), closed_form_param_count(cfg.model)
    if total != closed:
        logger.error("Parameter count disagrees with closed form", enumerated=total, closed_form=closed)
    frame = pd.DataFrame({"module": list(breakdown), "parameters": list(breakdown.values())})
    lines = [frame.to_string(index=False), "", f"total: {total}", f"closed form: {closed}"]
    return "\n".join(lines)
