import shutil
from pathlib import Path
from typing import List, Optional, Tuple, Union

import structlog

from cfsum.constants import SYNTH_DATA_DIR, SYNTH_RECIPE_FILE, TRAIN_MANIFEST_FILE, VAL_MANIFEST_FILE
from cfsum.errors import ConfigError, EmptyDatasetError
from cfsum.log_config import bind_run
from cfsum.resources.run_config import RunConfig, load_run_config, run_id
from cfsum.tools.data.manifest import load_manifest, load_sample
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.data.synth import SynthResult, synth_generate
from cfsum.tools.store.checkpoint import canonical_json

logger = structlog.get_logger(__name__)


def _require_synth(cfg: RunConfig):
    if cfg.data.synth is None:
        raise ConfigError("this command needs data.synth in the run config", key_path="data.synth")
    return cfg.data.synth


def cmd_synth(config: Union[str, Path], out: Union[str, Path], force: bool = False) -> str:
    """Write the synthetic dataset described by ``data.synth``; refuses a non-empty ``out`` unless forced."""
    cfg = load_run_config(config)
    bind_run(run_id(cfg), command="synth")
    synth = _require_synth(cfg)
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite", key_path="out")
    result = synth_generate(synth, out)
    return f"wrote {result.files_written} files to {out} ({result.n_train} train / {result.n_val} val samples)"


def ensure_synth_data(cfg: RunConfig, out_dir: Path) -> Optional[SynthResult]:
    """Generate into ``out_dir/data`` unless the dataset there was built from the same recipe.

    A dataset left by an earlier run with a different ``data.synth`` is deleted and regenerated.
    """
    data_dir = out_dir / SYNTH_DATA_DIR
    recipe_path = data_dir / SYNTH_RECIPE_FILE
    recipe = canonical_json(cfg.data.synth.model_dump(mode="json"))
    if (data_dir / TRAIN_MANIFEST_FILE).is_file() and (data_dir / VAL_MANIFEST_FILE).is_file():
        stored = recipe_path.read_text(encoding="utf-8") if recipe_path.is_file() else None
        if stored == recipe:
            logger.info("Reusing synthetic dataset", data_dir=str(data_dir))
            return None
        logger.warning("Synthetic dataset was built from another recipe, regenerating", data_dir=str(data_dir))
    if data_dir.exists():
        shutil.rmtree(data_dir)
    result = synth_generate(cfg.data.synth, data_dir)
    recipe_path.write_text(recipe, encoding="utf-8")
    return result


def _load_records(path: Path, split: Optional[str] = None) -> List[MultiModalSample]:
    manifest = load_manifest(path)
    records = manifest.records if split is None else manifest.split(split)
    return [load_sample(record, manifest.root) for record in records]


def load_run_datasets(cfg: RunConfig, out_dir: Path) -> Tuple[List[MultiModalSample], List[MultiModalSample]]:
    """(train, val) samples. A train manifest without a val manifest provides both through its split field."""
    if cfg.data.synth is not None:
        ensure_synth_data(cfg, out_dir)
        data_dir = out_dir / SYNTH_DATA_DIR
        train_path, val_path = data_dir / TRAIN_MANIFEST_FILE, data_dir / VAL_MANIFEST_FILE
    else:
        train_path = Path(cfg.data.train_manifest)
        val_path = Path(cfg.data.val_manifest) if cfg.data.val_manifest else None

    if val_path is None:
        train, val = _load_records(train_path, "train"), _load_records(train_path, "val")
    else:
        train, val = _load_records(train_path), _load_records(val_path)
    if not train:
        raise EmptyDatasetError(f"no training samples in {train_path}", {"path": str(train_path)})
    logger.info("Datasets ready", train=len(train), val=len(val))
    return train, val
