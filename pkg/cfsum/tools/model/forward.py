"""
Forward pass of the summarizer, one function per stage.

Every stage takes an optional ``tape``. When given, the stage records onto it;
when omitted the stage records onto whatever tape is already active (or none),
so stages compose inside a single ``with tape:`` block.
"""

from typing import Mapping, Optional, Tuple, Union

import numpy as np

from cfsum.errors import ContractError, ShapeError
from cfsum.tools.attention.attention import PaddingMask, multi_head_attention, sinusoidal_positional_encoding
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality
from cfsum.tools.model.model import CFSumModel
from cfsum.tools.model.types import FeatureSequence, SaliencyPrediction
from cfsum.tools.tensor import engine as E
from cfsum.tools.tensor.engine import Tape, Tensor, maybe_recording

Masks = Mapping[Modality, PaddingMask]


def _norm(x: Tensor, model: CFSumModel, prefix: str) -> Tensor:
    if not model.config.use_layer_norm:
        return x
    return E.layer_norm(x, model[f"{prefix}.gain"], model[f"{prefix}.bias"], model.config.layer_norm_eps)


def _mlp(x: Tensor, model: CFSumModel, prefix: str) -> Tensor:
    hidden = E.add_bias(E.matmul(x, model[f"{prefix}.w1"]), model[f"{prefix}.b1"])
    hidden = E.elementwise(model.config.activation, hidden)
    return E.add_bias(E.matmul(hidden, model[f"{prefix}.w2"]), model[f"{prefix}.b2"])


def _mask(masks: Optional[Masks], modality: Modality, n: int) -> PaddingMask:
    mask = (masks or {}).get(modality)
    if mask is None:
        return PaddingMask.all_valid(n)
    if len(mask) != n:
        raise ShapeError(f"{modality.value} mask length {len(mask)} does not match {n} rows")
    return mask


def modal_autoencoder_forward(seq: FeatureSequence, model: CFSumModel, tape: Optional[Tape] = None) -> Tensor:
    """Self-attention at native width with residual, projection MLP to d_model, then positional encoding."""
    config = model.config
    modality = seq.modality
    if not config.enabled(modality):
        raise ContractError(f"modality '{modality.value}' is disabled in this model")
    if seq.dim != config.dim(modality):
        raise ShapeError(f"{modality.value} features have width {seq.dim}, model expects {config.dim(modality)}")

    base = f"autoencoder.{modality.value}"
    with maybe_recording(tape):
        x = seq.features
        if config.use_autoencoder:
            heads = config.autoencoder_heads(modality)
            for layer in range(config.n_autoencoder_layers):
                attended = multi_head_attention(x, x, x, model.attention(f"{base}.layer{layer}.attn", heads), seq.mask)
                x = _norm(E.add(x, attended), model, f"{base}.layer{layer}.norm")
        projected = _mlp(x, model, f"{base}.mlp")
        return E.add(projected, sinusoidal_positional_encoding(seq.length, config.d_model))


def modal_fusion_forward(
    v_aug: Tensor,
    a_aug: Optional[Tensor],
    t_aug: Optional[Tensor],
    masks: Optional[Masks],
    model: CFSumModel,
    tape: Optional[Tape] = None,
) -> Tuple[Tensor, Optional[Tensor], Optional[Tensor]]:
    """Joint self-attention over the concatenated sequence, split back, then a per-modality FFN.

    Absent modalities are passed as None and come back as None.
    """
    config = model.config
    parts = [(m, x) for m, x in zip((Modality.video, Modality.audio, Modality.text), (v_aug, a_aug, t_aug)) if x is not None]
    for modality, x in parts:
        if len(x.shape) != 2 or x.shape[1] != config.d_model:
            raise ShapeError(f"fusion input '{modality.value}' must have width {config.d_model}, got {x.shape}")
    lengths = [x.shape[0] for _, x in parts]
    joint_mask = PaddingMask(np.concatenate([_mask(masks, m, x.shape[0]).valid for m, x in parts]))

    with maybe_recording(tape):
        z = E.concat_rows([x for _, x in parts]) if len(parts) > 1 else parts[0][1]
        for layer in range(config.n_fusion_layers):
            prefix = f"fusion.layer{layer}"
            attended = multi_head_attention(z, z, z, model.attention(f"{prefix}.attn", config.n_heads), joint_mask)
            z = _norm(E.add(z, attended), model, f"{prefix}.norm")
        pieces = E.split_rows(z, lengths) if len(parts) > 1 else [z]

        fused = {}
        for (modality, _), piece in zip(parts, pieces):
            prefix = f"fusion.ffn.{modality.value}"
            fused[modality] = _norm(E.add(piece, _mlp(piece, model, prefix)), model, f"{prefix}.norm")
    return fused[Modality.video], fused.get(Modality.audio), fused.get(Modality.text)


def interaction_branches(
    v_fused: Tensor,
    a_fused: Optional[Tensor],
    t_fused: Optional[Tensor],
    masks: Optional[Masks],
    model: CFSumModel,
    tape: Optional[Tape] = None,
) -> Tuple[Tensor, Optional[Tensor]]:
    """Clip-query cross-attention onto text; without text each branch attends over its own clips."""
    config = model.config
    n_c = v_fused.shape[0]
    if a_fused is not None and a_fused.shape[0] != n_c:
        raise ShapeError(f"video has {n_c} clips but audio has {a_fused.shape[0]}")
    if config.enabled(Modality.text) and t_fused is None:
        raise ContractError("text is enabled but no text features were given")
    use_text = config.enabled(Modality.text)
    heads = config.n_heads

    with maybe_recording(tape):
        if use_text:
            text_mask = _mask(masks, Modality.text, t_fused.shape[0])
            tv = multi_head_attention(v_fused, t_fused, t_fused, model.attention("interaction.text_video.attn", heads), text_mask)
        else:
            tv = multi_head_attention(
                v_fused, v_fused, v_fused, model.attention("interaction.text_video.attn", heads), _mask(masks, Modality.video, n_c)
            )
        ta = None
        if a_fused is not None and config.enabled(Modality.audio):
            params = model.attention("interaction.text_audio.attn", heads)
            if use_text:
                ta = multi_head_attention(a_fused, t_fused, t_fused, params, text_mask)
            else:
                ta = multi_head_attention(a_fused, a_fused, a_fused, params, _mask(masks, Modality.audio, n_c))
    return tv, ta


def feature_interaction_forward(
    v_fused: Tensor,
    a_fused: Optional[Tensor],
    t_fused: Optional[Tensor],
    masks: Optional[Masks],
    model: CFSumModel,
    tape: Optional[Tape] = None,
) -> Tensor:
    """z_out = w_tv * tv_att + w_ta * ta_att, one row per clip."""
    with maybe_recording(tape):
        tv, ta = interaction_branches(v_fused, a_fused, t_fused, masks, model)
        z_out = E.scale_by(tv, model["interaction.w_tv"])
        if ta is not None:
            z_out = E.add(z_out, E.scale_by(ta, model["interaction.w_ta"]))
        return z_out


def saliency_head_forward(
    z_out: Tensor,
    model: CFSumModel,
    tape: Optional[Tape] = None,
    clip_mask: Optional[PaddingMask] = None,
) -> SaliencyPrediction:
    with maybe_recording(tape):
        scores = E.add_bias(E.matmul(z_out, model["head.w"]), model["head.b"])
    return SaliencyPrediction(scores, clip_mask)


def mse_loss(
    pred: SaliencyPrediction,
    truth: np.ndarray,
    mask: Optional[Union[PaddingMask, np.ndarray]] = None,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Mean squared error over valid clips; the divisor is the number of valid clips."""
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if truth.size != len(pred):
        raise ShapeError(f"{truth.size} targets for {len(pred)} predicted clips")
    if not np.all(np.isfinite(truth)):
        raise ContractError("saliency targets must be finite")
    if mask is None:
        mask = pred.mask
    valid = mask.valid if isinstance(mask, PaddingMask) else np.asarray(mask, dtype=bool).reshape(-1)
    if valid.size != truth.size:
        raise ShapeError(f"loss mask length {valid.size} does not match {truth.size} clips")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ContractError("mse_loss needs at least one valid clip")

    with maybe_recording(tape):
        diff = E.sub(pred.scores, Tensor(truth.reshape(-1, 1)))
        if n_valid < valid.size:
            diff = E.mul(diff, Tensor(valid.astype(np.float64).reshape(-1, 1)))
        return E.scale(E.sum_all(E.mul(diff, diff)), 1.0 / n_valid)


def cfsum_forward(sample: MultiModalSample, model: CFSumModel, tape: Optional[Tape] = None) -> SaliencyPrediction:
    """Autoencoders, fusion, interaction and head; stages switched off in the config are bypassed."""
    config = model.config
    sequences = {}
    for modality in config.enabled_modalities:
        seq = sample.modality(modality)
        if seq is None:
            raise ContractError(f"sample '{sample.sample_id}' has no {modality.value} features")
        sequences[modality] = seq
    masks = {m: seq.mask for m, seq in sequences.items()}

    with maybe_recording(tape):
        augmented = {m: modal_autoencoder_forward(seq, model) for m, seq in sequences.items()}
        v, a, t = (augmented.get(m) for m in (Modality.video, Modality.audio, Modality.text))
        if config.use_fusion:
            v, a, t = modal_fusion_forward(v, a, t, masks, model)
        z_out = feature_interaction_forward(v, a, t, masks, model) if config.use_interaction else v
        return saliency_head_forward(z_out, model, clip_mask=sample.clip_mask)


def predict_scores(sample: MultiModalSample, model: CFSumModel) -> np.ndarray:
    """Per-clip scores with no tape recording."""
    return cfsum_forward(sample, model).values


def sample_loss(sample: MultiModalSample, model: CFSumModel, tape: Optional[Tape] = None) -> Tensor:
    with maybe_recording(tape):
        return mse_loss(cfsum_forward(sample, model), sample.saliency, sample.clip_mask)
