import json
from pathlib import Path
from typing import Any, Mapping, Union

import pandas as pd

from cfsum.tools.training.trainer import EpochRecord


class MetricsLog:
    """One JSON object per epoch; the file is truncated when the log is opened."""

    def __init__(self, path: Union[str, Path], config_hash: str, seed: int):
        self.path = Path(path)
        self.config_hash = config_hash
        self.seed = seed
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def __call__(self, record: EpochRecord) -> None:
        self.append(record)

    def append(self, record: EpochRecord) -> None:
        line = {**record.to_dict(), "config_hash": self.config_hash, "seed": self.seed}
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(line, sort_keys=True) + "\n")


def read_metrics_log(path: Union[str, Path]) -> list:
    with Path(path).open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path: Union[str, Path], payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def write_frame(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
