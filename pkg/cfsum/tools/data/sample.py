from dataclasses import dataclass
from typing import Optional

import numpy as np

from cfsum.errors import ContractError, ShapeError
from cfsum.tools.attention.attention import PaddingMask
from cfsum.tools.model.config import Modality
from cfsum.tools.model.types import FeatureSequence


@dataclass(frozen=True)
class MultiModalSample:
    sample_id: str
    video: FeatureSequence
    saliency: np.ndarray
    audio: Optional[FeatureSequence] = None
    text: Optional[FeatureSequence] = None
    category: Optional[str] = None

    def __post_init__(self):
        saliency = np.asarray(self.saliency, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(saliency)):
            raise ContractError(f"sample '{self.sample_id}' has non-finite saliency")
        n_c = self.video.length
        if saliency.size != n_c:
            raise ShapeError(f"sample '{self.sample_id}': {saliency.size} labels for {n_c} clips")
        if self.audio is not None and self.audio.length != n_c:
            raise ShapeError(f"sample '{self.sample_id}': audio has {self.audio.length} clips, video has {n_c}")
        saliency.setflags(write=False)
        object.__setattr__(self, "saliency", saliency)

    @property
    def n_clips(self) -> int:
        return self.video.length

    @property
    def n_tokens(self) -> int:
        return self.text.length if self.text is not None else 0

    @property
    def clip_mask(self) -> PaddingMask:
        return self.video.mask

    def modality(self, modality: Modality) -> Optional[FeatureSequence]:
        return {Modality.video: self.video, Modality.audio: self.audio, Modality.text: self.text}[Modality(modality)]
