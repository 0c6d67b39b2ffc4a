import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import pandas as pd

from cfsum.tools.evaluation.metrics import chance_average_precision


@dataclass(frozen=True)
class SampleMetrics:
    sample_id: str
    ap: float
    hit1: int
    n_clips: int
    n_positives: int
    category: Optional[str] = None


@dataclass(frozen=True)
class MetricsReport:
    """Per-sample AP and HIT@1, ordered by ascending sample_id, plus their means."""

    per_sample: List[SampleMetrics]
    threshold: float
    skipped: List[str] = field(default_factory=list)

    @property
    def map(self) -> float:
        return math.fsum(s.ap for s in self.per_sample) / len(self.per_sample)

    @property
    def chance_map(self) -> float:
        """mAP a uniformly random ranker is expected to reach on the same samples."""
        return math.fsum(chance_average_precision(s.n_clips, s.n_positives) for s in self.per_sample) / len(self.per_sample)

    @property
    def hit_at_1(self) -> float:
        return math.fsum(s.hit1 for s in self.per_sample) / len(self.per_sample)

    @property
    def n_samples(self) -> int:
        return len(self.per_sample)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.per_sample])

    @property
    def per_category(self) -> Dict[str, Dict[str, float]]:
        frame = self.to_frame()
        if frame.empty:
            return {}
        frame = frame[frame["category"].notna()]
        if frame.empty:
            return {}
        grouped = frame.groupby("category", sort=True).agg(
            map=("ap", "mean"),
            hit_at_1=("hit1", "mean"),
            n_samples=("sample_id", "count"),
        )
        return {
            str(name): {"map": float(row["map"]), "hit_at_1": float(row["hit_at_1"]), "n_samples": int(row["n_samples"])}
            for name, row in grouped.iterrows()
        }

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "hit_at_1": self.hit_at_1,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "n_skipped": len(self.skipped),
            "skipped": list(self.skipped),
            "per_category": self.per_category,
            "per_sample": [asdict(s) for s in self.per_sample],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render_table(self) -> str:
        summary = pd.DataFrame(
            [{"samples": self.n_samples, "skipped": len(self.skipped), "mAP": self.map, "HIT@1": self.hit_at_1}]
        )
        lines = [summary.to_string(index=False, float_format=lambda v: f"{v:.4f}")]
        categories = self.per_category
        if categories:
            frame = pd.DataFrame.from_dict(categories, orient="index")
            frame.index.name = "category"
            lines += ["", frame.to_string(float_format=lambda v: f"{v:.4f}")]
        return "\n".join(lines)
