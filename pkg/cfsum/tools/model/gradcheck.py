from typing import List, Optional

import numpy as np
import structlog

from cfsum.constants import GRADCHECK_MAX_COORDS, GRADCHECK_STEP
from cfsum.tools.attention.attention import AttentionParams, PaddingMask, multi_head_attention
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality, ModelConfig
from cfsum.tools.model.forward import sample_loss
from cfsum.tools.model.model import CFSumModel, init_model
from cfsum.tools.model.types import FeatureSequence
from cfsum.tools.tensor import engine as E
from cfsum.tools.tensor.engine import Tape, Tensor, finite_diff_grad
from cfsum.tools.tensor.gradcheck import GradcheckResult, check_gradient, relative_error, sample_coords

logger = structlog.get_logger(__name__)

TINY_CLIPS = 3
TINY_TOKENS = 2
TINY_INPUT_DIM = 4
TINY_MODEL_DIM = 8


def tiny_config(seed: int, use_layer_norm: bool = True, **overrides) -> ModelConfig:
    values = dict(
        d_video=TINY_INPUT_DIM,
        d_audio=TINY_INPUT_DIM,
        d_text=TINY_INPUT_DIM,
        d_model=TINY_MODEL_DIM,
        n_heads=2,
        ffn_hidden=2 * TINY_MODEL_DIM,
        use_layer_norm=use_layer_norm,
        seed=seed,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_sample(rng: np.random.Generator, n_clips: int = TINY_CLIPS, n_tokens: int = TINY_TOKENS) -> MultiModalSample:
    def features(modality, n):
        return FeatureSequence(modality, Tensor(rng.uniform(-1.0, 1.0, size=(n, TINY_INPUT_DIM))))

    return MultiModalSample(
        sample_id="gradcheck",
        video=features(Modality.video, n_clips),
        audio=features(Modality.audio, n_clips),
        text=features(Modality.text, n_tokens),
        saliency=rng.uniform(0.0, 1.0, size=n_clips),
    )


def check_model_gradients(
    name: str,
    model: CFSumModel,
    sample: MultiModalSample,
    max_coords: Optional[int] = GRADCHECK_MAX_COORDS,
    rng: Optional[np.random.Generator] = None,
    h: float = GRADCHECK_STEP,
) -> List[GradcheckResult]:
    """One result per trainable tensor: tape gradient of the sample loss vs central differences."""
    rng = rng or np.random.default_rng(0)
    model.zero_grad()
    tape = Tape()
    with tape:
        loss = sample_loss(sample, model)
    tape.backward(loss)

    results = []
    for param_name, tensor in model.named_trainable():
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)

        def f(t, param_name=param_name):
            return sample_loss(sample, model.replace({param_name: t}))

        coords = sample_coords(tensor.size, max_coords, rng)
        numeric = finite_diff_grad(f, tensor, h, coords).flat
        picked = np.arange(tensor.size) if coords is None else np.asarray(coords)
        errors = relative_error(analytic.reshape(-1)[picked], numeric[picked])
        results.append(GradcheckResult(f"{name}.{param_name}", float(errors.max()), len(picked)))
    model.zero_grad()
    return results


def attention_cases(rng: np.random.Generator) -> List[GradcheckResult]:
    d_in, d_model, n_q, n_k = TINY_INPUT_DIM, TINY_MODEL_DIM, 3, 4
    key_mask = PaddingMask(np.array([True, True, False, True]))
    readout = Tensor(rng.uniform(-1.0, 1.0, size=(n_q, d_model)))

    def attention(q, k, v, w_q, w_k, w_v, w_o, mask=None):
        out = multi_head_attention(q, k, v, AttentionParams(w_q, w_k, w_v, w_o, n_heads=2), mask)
        return E.sum_all(E.mul(out, readout))

    def u(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    inputs = [u(n_q, d_in), u(n_k, d_in), u(n_k, d_in), u(d_in, d_model), u(d_in, d_model), u(d_in, d_model), u(d_model, d_model)]
    return [
        check_gradient("attention", attention, inputs, rng=rng),
        check_gradient("attention_masked", lambda *args: attention(*args, mask=key_mask), inputs, rng=rng),
    ]


def run_model_suite(seed: int, max_coords: Optional[int] = GRADCHECK_MAX_COORDS) -> List[GradcheckResult]:
    """Attention plus end-to-end checks with layer normalisation on and off."""
    rng = np.random.default_rng(seed)
    results = attention_cases(rng)
    sample = tiny_sample(rng)
    for label, use_layer_norm in (("model", True), ("model_no_norm", False)):
        model = init_model(tiny_config(seed, use_layer_norm))
        results += check_model_gradients(label, model, sample, max_coords, rng)
    logger.info(
        "Model gradient suite finished",
        checks=len(results),
        failed=sum(not r.passed for r in results),
        worst=max(r.max_rel_error for r in results),
    )
    return results
