import json
from pathlib import Path

import numpy as np
import pytest

from cfsum.tools.attention.attention import PaddingMask
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality
from cfsum.tools.model.gradcheck import tiny_config
from cfsum.tools.model.model import init_model
from cfsum.tools.model.types import FeatureSequence
from cfsum.tools.tensor.engine import Tensor

CONFIG_DIR = Path(__file__).parent / "configs"


def make_sample(
    rng,
    n_clips=3,
    n_tokens=2,
    dim=4,
    sample_id="s-000",
    saliency=None,
    clip_valid=None,
    token_valid=None,
    category=None,
    audio=True,
    text=True,
):
    clip_mask = PaddingMask(np.asarray(clip_valid)) if clip_valid is not None else None
    token_mask = PaddingMask(np.asarray(token_valid)) if token_valid is not None else None

    def seq(modality, n, mask):
        return FeatureSequence(modality, Tensor(rng.uniform(-1.0, 1.0, size=(n, dim))), mask)

    if saliency is None:
        saliency = rng.uniform(0.0, 1.0, size=n_clips)
    return MultiModalSample(
        sample_id=sample_id,
        video=seq(Modality.video, n_clips, clip_mask),
        audio=seq(Modality.audio, n_clips, clip_mask) if audio else None,
        text=seq(Modality.text, n_tokens, token_mask) if text else None,
        saliency=saliency,
        category=category,
    )


def label_only_sample(sample_id, labels, category=None):
    """Sample whose features are irrelevant; used to test scoring and aggregation."""
    labels = np.asarray(labels, dtype=np.float64)
    return MultiModalSample(
        sample_id=sample_id,
        video=FeatureSequence(Modality.video, Tensor(np.ones((labels.size, 2)))),
        saliency=labels,
        category=category,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return init_model(tiny_config(seed=5))


@pytest.fixture
def tiny_run_config(tmp_path):
    """The tiny run config with output_dir redirected into tmp_path; returns a writer for variants."""

    def write(name="run.json", **sections):
        payload = json.loads((CONFIG_DIR / "tiny_run.json").read_text(encoding="utf-8"))
        payload["output_dir"] = str(tmp_path / "out")
        for section, values in sections.items():
            if isinstance(values, dict):
                payload.setdefault(section, {}).update(values)
            else:
                payload[section] = values
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write
