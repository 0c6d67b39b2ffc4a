import math
from enum import Enum
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Modality(str, Enum):
    video = "video"
    audio = "audio"
    text = "text"


MODALITY_ORDER: Tuple[Modality, ...] = (Modality.video, Modality.audio, Modality.text)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d_video: int = Field(16, gt=0)
    d_audio: int = Field(16, gt=0)
    d_text: int = Field(16, gt=0)
    d_model: int = Field(64, gt=0)
    n_heads: int = Field(8, gt=0)
    ffn_hidden: Optional[int] = Field(None, gt=0)
    n_autoencoder_layers: int = Field(1, ge=1)
    n_fusion_layers: int = Field(1, ge=1)
    use_layer_norm: bool = True
    layer_norm_eps: float = Field(1e-5, gt=0)
    use_output_proj: bool = True
    use_autoencoder: bool = True
    use_fusion: bool = True
    use_interaction: bool = True
    activation: Literal["relu", "tanh"] = "relu"
    enabled_modalities: Tuple[Modality, ...] = MODALITY_ORDER
    w_tv_init: float = 2.0
    w_ta_init: float = 1.0
    interaction_weights_learnable: bool = True
    seed: int = Field(0, ge=0)

    @field_validator("enabled_modalities")
    @classmethod
    def _video_first(cls, value):
        if Modality.video not in value:
            raise ValueError("video must always be enabled")
        if len(set(value)) != len(value):
            raise ValueError("modalities must not repeat")
        # canonical order keeps parameter layout independent of how the list was written
        return tuple(m for m in MODALITY_ORDER if m in value)

    @field_validator("w_tv_init", "w_ta_init")
    @classmethod
    def _finite(cls, value):
        if not math.isfinite(value):
            raise ValueError("interaction weight init must be finite")
        return value

    @model_validator(mode="before")
    @classmethod
    def _default_ffn_hidden(cls, data):
        if isinstance(data, dict) and data.get("ffn_hidden") is None:
            d_model = data.get("d_model", cls.model_fields["d_model"].default)
            if isinstance(d_model, int):
                data = {**data, "ffn_hidden": 4 * d_model}
        return data

    @model_validator(mode="after")
    def _check_dims(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.d_model % 2:
            raise ValueError(f"d_model ({self.d_model}) must be even for positional encodings")
        return self

    def dim(self, modality: Modality) -> int:
        return {
            Modality.video: self.d_video,
            Modality.audio: self.d_audio,
            Modality.text: self.d_text,
        }[Modality(modality)]

    def enabled(self, modality: Modality) -> bool:
        return Modality(modality) in self.enabled_modalities

    def autoencoder_heads(self, modality: Modality) -> int:
        """Autoencoders attend at the native feature width, so use the largest head count dividing it."""
        d = self.dim(modality)
        return max(h for h in range(1, self.n_heads + 1) if d % h == 0)
