from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # 0 is accepted so a run can be replayed without moving any parameter
    learning_rate: float = Field(1e-3, ge=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    epochs: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)
    shuffle: bool = True
    coupled_l2: bool = False
    clip_grad_norm: Optional[float] = Field(None, gt=0.0)
    eval_every: int = Field(1, ge=1)
