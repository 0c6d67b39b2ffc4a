"""
Planted-signal synthetic datasets.

K latent concepts get one orthonormal embedding per modality. Each sample draws
a query of a few concepts (its text tokens), assigns every clip a concept, and
labels a clip salient when its concept is in the query. Audio carries the
concept only for a fraction of salient clips, so audio usefulness is tunable
per category.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from cfsum.constants import (
    CONCEPTS_FILE,
    FEATURES_DIR,
    FEATURES_ENTRY,
    TRAIN_MANIFEST_FILE,
    VAL_MANIFEST_FILE,
)
from cfsum.errors import ContractError
from cfsum.tools.data.container import write_tensor_file
from cfsum.tools.data.manifest import ManifestRecord, write_manifest
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality
from cfsum.tools.tensor.engine import Tensor

logger = structlog.get_logger(__name__)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_samples: int = Field(500, ge=1)
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    n_concepts: int = Field(6, ge=2)
    d_video: int = Field(16, gt=0)
    d_audio: int = Field(16, gt=0)
    d_text: int = Field(16, gt=0)
    min_clips: int = Field(8, ge=1)
    max_clips: int = Field(16, ge=1)
    min_tokens: int = Field(1, ge=1)
    max_tokens: int = Field(4, ge=1)
    min_query_concepts: int = Field(1, ge=1)
    max_query_concepts: int = Field(3, ge=1)
    noise_sigma: float = Field(0.3, ge=0.0)
    audio_informative_fraction: float = Field(0.5, ge=0.0, le=1.0)
    categories: Optional[Dict[str, float]] = None
    include_audio: bool = True
    include_text: bool = True
    seed: int = Field(0, ge=0)

    @field_validator("categories")
    @classmethod
    def _fractions_in_range(cls, value):
        if value is not None:
            if not value:
                raise ValueError("categories must name at least one category")
            for name, rho in value.items():
                if not 0.0 <= rho <= 1.0:
                    raise ValueError(f"audio_informative_fraction for '{name}' must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _check_ranges(self):
        for low, high in (("min_clips", "max_clips"), ("min_tokens", "max_tokens"), ("min_query_concepts", "max_query_concepts")):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} must not exceed {high}")
        if self.max_query_concepts > self.n_concepts:
            raise ValueError("max_query_concepts must not exceed n_concepts")
        for modality in Modality:
            if self.dim(modality) < self.n_concepts:
                raise ValueError(
                    f"d_{modality.value} ({self.dim(modality)}) is smaller than n_concepts ({self.n_concepts}); "
                    "cannot build an orthonormal concept set"
                )
        return self

    def dim(self, modality: Modality) -> int:
        return {Modality.video: self.d_video, Modality.audio: self.d_audio, Modality.text: self.d_text}[modality]

    def category_for(self, index: int) -> Optional[str]:
        if not self.categories:
            return None
        names = list(self.categories)
        return names[index % len(names)]

    def rho_for(self, category: Optional[str]) -> float:
        if category is None:
            return self.audio_informative_fraction
        return self.categories[category]


@dataclass(frozen=True)
class SynthSample:
    sample_id: str
    video: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    labels: np.ndarray
    clip_concepts: np.ndarray
    query: np.ndarray
    category: Optional[str]


@dataclass(frozen=True)
class SynthResult:
    out_dir: Path
    train_manifest: Path
    val_manifest: Path
    n_train: int
    n_val: int
    files_written: int


def concept_embeddings(dim: int, n_concepts: int, rng: np.random.Generator) -> np.ndarray:
    """K x dim matrix with orthonormal rows."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_concepts)))
    return np.ascontiguousarray(q.T)


def generate_samples(cfg: SynthConfig) -> Tuple[Dict[Modality, np.ndarray], List[SynthSample]]:
    """In-memory generation; returns (concepts by modality, samples)."""
    rng = np.random.default_rng(cfg.seed)
    K, sigma = cfg.n_concepts, cfg.noise_sigma
    concepts = {m: concept_embeddings(cfg.dim(m), K, rng) for m in Modality}

    samples: List[SynthSample] = []
    for index in range(cfg.n_samples):
        category = cfg.category_for(index)
        n_clips = int(rng.integers(cfg.min_clips, cfg.max_clips + 1))
        n_query = int(rng.integers(cfg.min_query_concepts, cfg.max_query_concepts + 1))
        query = np.sort(rng.choice(K, size=n_query, replace=False))
        n_tokens = max(n_query, int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1)))
        tokens = query[np.arange(n_tokens) % n_query]

        clip_concepts = rng.integers(0, K, size=n_clips)
        salient = np.isin(clip_concepts, query)
        if not salient.any():
            clip_concepts[rng.integers(n_clips)] = rng.choice(query)
            salient = np.isin(clip_concepts, query)

        informative = salient & (rng.random(n_clips) < cfg.rho_for(category))
        video = concepts[Modality.video][clip_concepts] + sigma * rng.standard_normal((n_clips, cfg.d_video))
        audio_signal = np.where(informative[:, None], concepts[Modality.audio][clip_concepts], 0.0)
        audio = audio_signal + sigma * rng.standard_normal((n_clips, cfg.d_audio))
        text = concepts[Modality.text][tokens] + sigma * rng.standard_normal((n_tokens, cfg.d_text))

        samples.append(
            SynthSample(
                sample_id=f"synth-{index:05d}",
                video=video,
                audio=audio,
                text=text,
                labels=salient.astype(np.float64),
                clip_concepts=clip_concepts,
                query=query,
                category=category,
            )
        )
    return concepts, samples


def synth_generate(cfg: SynthConfig, out_dir: Union[str, Path]) -> SynthResult:
    """Write features, train/val manifests and the concept table under ``out_dir``."""
    out_dir = Path(out_dir)
    concepts, samples = generate_samples(cfg)
    n_val = min(int(round(cfg.n_samples * cfg.val_fraction)), cfg.n_samples - 1)
    n_train = cfg.n_samples - n_val

    files = 0
    records = {"train": [], "val": []}
    for index, sample in enumerate(samples):
        split = "train" if index < n_train else "val"
        paths = {}
        arrays = {Modality.video: sample.video}
        if cfg.include_audio:
            arrays[Modality.audio] = sample.audio
        if cfg.include_text:
            arrays[Modality.text] = sample.text
        for modality, array in arrays.items():
            relative = f"{FEATURES_DIR}/{sample.sample_id}.{modality.value}.cfst"
            write_tensor_file(out_dir / relative, {FEATURES_ENTRY: Tensor(array)})
            paths[f"{modality.value}_path"] = relative
            files += 1
        records[split].append(
            ManifestRecord(
                sample_id=sample.sample_id,
                labels=sample.labels.tolist(),
                split=split,
                category=sample.category,
                **paths,
            )
        )

    write_tensor_file(out_dir / CONCEPTS_FILE, {m.value: Tensor(e) for m, e in concepts.items()})
    train_manifest = write_manifest(out_dir / TRAIN_MANIFEST_FILE, records["train"])
    val_manifest = write_manifest(out_dir / VAL_MANIFEST_FILE, records["val"])
    files += 3

    positives = sum(float(s.labels.sum()) for s in samples)
    clips = sum(s.labels.size for s in samples)
    logger.info(
        "Synthetic dataset written",
        out_dir=str(out_dir),
        train=n_train,
        val=n_val,
        files=files,
        positive_rate=positives / clips,
        seed=cfg.seed,
    )
    return SynthResult(out_dir, train_manifest, val_manifest, n_train, n_val, files)


def nearest_concept_scores(sample: MultiModalSample, concepts: Dict[str, np.ndarray]) -> np.ndarray:
    """Oracle scorer: decode query concepts from text, score clips by their best match among them."""
    if sample.text is None:
        raise ContractError("the nearest-concept oracle needs text features")
    text_concepts = concepts[Modality.text.value]
    video_concepts = concepts[Modality.video.value]
    query = np.unique(np.argmax(sample.text.features.data @ text_concepts.T, axis=1))
    similarity = sample.video.features.data @ video_concepts[query].T
    return similarity.max(axis=1)
