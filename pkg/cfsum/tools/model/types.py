from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cfsum.errors import ShapeError
from cfsum.tools.attention.attention import PaddingMask
from cfsum.tools.model.config import Modality
from cfsum.tools.tensor.engine import Tensor


@dataclass(frozen=True)
class FeatureSequence:
    modality: Modality
    features: Tensor
    mask: Optional[PaddingMask] = None

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if len(self.features.shape) != 2:
            raise ShapeError(f"{self.modality.value} features must be 2-d, got {self.features.shape}")
        if self.mask is None:
            object.__setattr__(self, "mask", PaddingMask.all_valid(self.features.shape[0]))
        elif len(self.mask) != self.features.shape[0]:
            raise ShapeError(
                f"{self.modality.value} mask length {len(self.mask)} does not match {self.features.shape[0]} rows"
            )

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SaliencyPrediction:
    scores: Tensor
    mask: PaddingMask = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            object.__setattr__(self, "mask", PaddingMask.all_valid(self.scores.shape[0]))
        if len(self.mask) != self.scores.shape[0]:
            raise ShapeError(f"prediction mask length {len(self.mask)} does not match {self.scores.shape[0]} clips")

    @property
    def values(self) -> np.ndarray:
        return self.scores.data.reshape(-1).copy()

    def __len__(self) -> int:
        return self.scores.shape[0]
