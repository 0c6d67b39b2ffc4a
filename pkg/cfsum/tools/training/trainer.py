import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from cfsum.constants import DEFAULT_SALIENCY_THRESHOLD
from cfsum.errors import EmptyDatasetError, TrainingDivergedError, UndefinedAPError
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.evaluation.evaluate import evaluate
from cfsum.tools.model.forward import sample_loss
from cfsum.tools.model.model import CFSumModel
from cfsum.tools.tensor.engine import Tape
from cfsum.tools.training.adam import AdamState, adam_step, clip_grad_norm, init_adam_state
from cfsum.tools.training.config import TrainConfig

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_map: Optional[float] = None
    val_hit1: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: CFSumModel
    history: List[EpochRecord] = field(default_factory=list)
    optimizer: Optional[AdamState] = None

    @property
    def final_loss(self) -> float:
        return self.history[-1].train_loss

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.history])


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    """Visit order for one epoch from a counter-based generator keyed by (seed, epoch)."""
    if not shuffle:
        return np.arange(n)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))
    return rng.permutation(n)


def sample_gradients(sample: MultiModalSample, model: CFSumModel):
    """Loss value and a gradient array for every trainable parameter (zeros where unreached)."""
    model.zero_grad()
    tape = Tape()
    with tape:
        loss = sample_loss(sample, model)
    tape.backward(loss)
    grads = {
        name: tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        for name, tensor in model.named_trainable()
    }
    model.zero_grad()
    return loss.item(), grads


def train(
    dataset: Sequence[MultiModalSample],
    model: CFSumModel,
    cfg: TrainConfig,
    val_dataset: Optional[Sequence[MultiModalSample]] = None,
    threshold: float = DEFAULT_SALIENCY_THRESHOLD,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    workers: int = 1,
) -> TrainResult:
    """Per-sample Adam steps over ``cfg.epochs`` epochs; bit-reproducible for a fixed seed."""
    if not dataset:
        raise EmptyDatasetError("training needs at least one sample")
    state = init_adam_state(dict(model.named_trainable()))
    result = TrainResult(model=model)

    for epoch in range(cfg.epochs):
        losses = []
        for index in epoch_order(len(dataset), cfg.seed, epoch, cfg.shuffle):
            sample = dataset[int(index)]
            loss, grads = sample_gradients(sample, model)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} on sample '{sample.sample_id}'",
                    {"epoch": epoch, "sample_id": sample.sample_id},
                )
            if cfg.clip_grad_norm is not None:
                grads = clip_grad_norm(grads, cfg.clip_grad_norm)
            params, state = adam_step(dict(model.named_trainable()), grads, state, cfg)
            model = model.replace(params)
            losses.append(loss)

        record = EpochRecord(epoch=epoch, train_loss=math.fsum(losses) / len(losses))
        if val_dataset and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            try:
                report = evaluate(model, val_dataset, threshold, workers)
                record = EpochRecord(epoch, record.train_loss, report.map, report.hit_at_1)
            except UndefinedAPError:
                logger.warning("Validation metrics undefined", epoch=epoch, threshold=threshold)
        result.history.append(record)
        logger.info("Epoch finished", **record.to_dict())
        if on_epoch is not None:
            on_epoch(record)

    result.model = model
    result.optimizer = state
    return result
