import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from cfsum.constants import FEATURES_ENTRY, MASK_ENTRY
from cfsum.errors import CFSumError, ManifestError
from cfsum.tools.attention.attention import PaddingMask
from cfsum.tools.data.container import read_tensor_file
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality
from cfsum.tools.model.types import FeatureSequence

logger = structlog.get_logger(__name__)


class ManifestRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sample_id: str
    video_path: str
    audio_path: Optional[str] = None
    text_path: Optional[str] = None
    labels: List[float]
    split: Literal["train", "val"] = "train"
    category: Optional[str] = None

    @field_validator("sample_id")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("sample_id must not be empty")
        return value

    def path(self, modality: Modality) -> Optional[str]:
        return {
            Modality.video: self.video_path,
            Modality.audio: self.audio_path,
            Modality.text: self.text_path,
        }[Modality(modality)]


@dataclass(frozen=True)
class DatasetManifest:
    path: Path
    records: List[ManifestRecord]

    @property
    def root(self) -> Path:
        return self.path.parent

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def get(self, sample_id: str) -> ManifestRecord:
        for record in self.records:
            if record.sample_id == sample_id:
                return record
        raise ManifestError(f"sample '{sample_id}' is not in {self.path}", {"sample_id": sample_id})


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Parse a JSON-lines manifest; blank lines are ignored, sample ids must be unique."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e.strerror}", {"path": str(path)})

    records: List[ManifestRecord] = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = ManifestRecord.model_validate(json.loads(line))
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({e.msg})", {"line": lineno})
        except ValidationError as e:
            problems = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
            raise ManifestError(f"{path}:{lineno}: {problems}", {"line": lineno})
        if record.sample_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate sample_id '{record.sample_id}'", {"line": lineno})
        seen.add(record.sample_id)
        records.append(record)
    logger.info("Manifest loaded", path=str(path), records=len(records))
    return DatasetManifest(path, records)


def normalize_labels(labels: Iterable[float], sample_id: str = "") -> np.ndarray:
    """Divide by the per-sample maximum; an all-zero vector stays zero."""
    values = np.asarray(list(labels), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ManifestError(f"sample '{sample_id}' has non-finite labels")
    if np.any(values < 0):
        raise ManifestError(f"sample '{sample_id}' has negative labels")
    peak = values.max() if values.size else 0.0
    return values / peak if peak > 0 else values


def _load_sequence(record: ManifestRecord, modality: Modality, root: Path) -> Optional[FeatureSequence]:
    relative = record.path(modality)
    if relative is None:
        return None
    path = root / relative
    if not path.is_file():
        raise ManifestError(
            f"sample '{record.sample_id}': {modality.value} file {path} does not exist",
            {"sample_id": record.sample_id, "path": str(path)},
        )
    try:
        tensors = read_tensor_file(path)
    except CFSumError as e:
        e.details.setdefault("path", str(path))
        raise
    if FEATURES_ENTRY not in tensors:
        raise ManifestError(f"{path} has no '{FEATURES_ENTRY}' entry", {"path": str(path)})
    mask = None
    if MASK_ENTRY in tensors:
        mask = PaddingMask(tensors[MASK_ENTRY].data.reshape(-1) > 0.5)
    return FeatureSequence(modality, tensors[FEATURES_ENTRY], mask)


def load_sample(record: ManifestRecord, root: Union[str, Path] = ".") -> MultiModalSample:
    """Feature paths resolve against ``root`` (the manifest's directory)."""
    root = Path(root)
    video = _load_sequence(record, Modality.video, root)
    if len(record.labels) != video.length:
        raise ManifestError(
            f"sample '{record.sample_id}': {len(record.labels)} labels for {video.length} clips",
            {"sample_id": record.sample_id},
        )
    audio = _load_sequence(record, Modality.audio, root)
    if audio is not None and audio.length != video.length:
        raise ManifestError(
            f"sample '{record.sample_id}': audio has {audio.length} clips, video has {video.length}",
            {"sample_id": record.sample_id},
        )
    return MultiModalSample(
        sample_id=record.sample_id,
        video=video,
        audio=audio,
        text=_load_sequence(record, Modality.text, root),
        saliency=normalize_labels(record.labels, record.sample_id),
        category=record.category,
    )


def load_dataset(path: Union[str, Path], split: Optional[str] = None) -> List[MultiModalSample]:
    manifest = load_manifest(path)
    records = manifest.records if split is None else manifest.split(split)
    return [load_sample(record, manifest.root) for record in records]


def write_manifest(path: Union[str, Path], records: Iterable[ManifestRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.model_dump(exclude_none=True), sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
