import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, Union

import numpy as np
import structlog

from cfsum.constants import DEFAULT_SALIENCY_THRESHOLD
from cfsum.errors import EmptyDatasetError, UndefinedAPError
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.evaluation.metrics import average_precision, binarize_labels, hit_at_1
from cfsum.tools.evaluation.report import MetricsReport, SampleMetrics
from cfsum.tools.model.forward import predict_scores
from cfsum.tools.model.model import CFSumModel

logger = structlog.get_logger(__name__)

ScoreFn = Callable[[MultiModalSample], np.ndarray]


def _score_sample(sample: MultiModalSample, score_fn: ScoreFn, threshold: float) -> Union[SampleMetrics, str]:
    """Metrics over valid clips, or the sample id when it has no positive clip."""
    valid = sample.clip_mask.valid
    scores = np.asarray(score_fn(sample), dtype=np.float64).reshape(-1)[valid]
    positives = binarize_labels(sample.saliency, threshold)[valid]
    if not positives.any():
        return sample.sample_id
    return SampleMetrics(
        sample_id=sample.sample_id,
        ap=average_precision(scores, positives),
        hit1=hit_at_1(scores, positives),
        n_clips=int(valid.sum()),
        n_positives=int(positives.sum()),
        category=sample.category,
    )


def evaluate_scores(
    dataset: Sequence[MultiModalSample],
    score_fn: ScoreFn,
    threshold: float = DEFAULT_SALIENCY_THRESHOLD,
    workers: int = 1,
) -> MetricsReport:
    """Score every sample, fanning out over ``workers`` threads; aggregation is by ascending sample_id."""
    if not dataset:
        raise EmptyDatasetError("evaluation needs at least one sample")
    ordered = sorted(dataset, key=lambda s: s.sample_id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda s: _score_sample(s, score_fn, threshold), ordered))
    else:
        outcomes = [_score_sample(s, score_fn, threshold) for s in ordered]

    per_sample = [o for o in outcomes if isinstance(o, SampleMetrics)]
    skipped = [o for o in outcomes if isinstance(o, str)]
    if skipped:
        logger.warning("Samples without positives excluded", skipped=len(skipped), threshold=threshold)
    if not per_sample:
        raise UndefinedAPError(
            f"no sample has a clip with saliency >= {threshold}", {"skipped": len(skipped), "threshold": threshold}
        )
    report = MetricsReport(per_sample, threshold, skipped)
    logger.info("Evaluation finished", samples=report.n_samples, map=report.map, hit_at_1=report.hit_at_1)
    return report


def evaluate(
    model: CFSumModel,
    dataset: Sequence[MultiModalSample],
    threshold: float = DEFAULT_SALIENCY_THRESHOLD,
    workers: int = 1,
) -> MetricsReport:
    return evaluate_scores(dataset, lambda sample: predict_scores(sample, model), threshold, workers)


def random_scorer(seed: int) -> ScoreFn:
    """Uniform scores seeded per sample id, independent of evaluation order."""

    def score(sample: MultiModalSample) -> np.ndarray:
        rng = np.random.default_rng([seed, zlib.crc32(sample.sample_id.encode("utf-8"))])
        return rng.random(sample.n_clips)

    return score


def label_scorer(sample: MultiModalSample) -> np.ndarray:
    """Perfect ranker: the ground truth itself."""
    return np.asarray(sample.saliency)


def evaluate_baseline(
    dataset: Sequence[MultiModalSample],
    kind: str = "random",
    seed: int = 0,
    threshold: float = DEFAULT_SALIENCY_THRESHOLD,
    workers: int = 1,
    score_fn: Optional[ScoreFn] = None,
) -> MetricsReport:
    score_fn = score_fn or {"random": random_scorer(seed), "labels": label_scorer}[kind]
    return evaluate_scores(dataset, score_fn, threshold, workers)
