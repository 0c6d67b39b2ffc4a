import math

import numpy as np
import pytest
from pydantic import ValidationError

from cfsum.errors import ContractError, ShapeError
from cfsum.tools.attention.attention import PaddingMask, multi_head_attention, sinusoidal_positional_encoding
from cfsum.tools.data.sample import MultiModalSample
from cfsum.tools.model.config import Modality, ModelConfig
from cfsum.tools.model.forward import (
    cfsum_forward,
    feature_interaction_forward,
    interaction_branches,
    modal_autoencoder_forward,
    modal_fusion_forward,
    mse_loss,
    saliency_head_forward,
)
from cfsum.tools.model.gradcheck import run_model_suite, tiny_config
from cfsum.tools.model.model import (
    closed_form_param_count,
    count_params,
    init_model,
    param_breakdown,
    parameter_layout,
)
from cfsum.tools.model.types import FeatureSequence, SaliencyPrediction
from cfsum.tools.tensor import engine as E
from cfsum.tools.tensor.engine import Tensor

from conftest import make_sample


def seq(rng, modality, n, d=4, mask=None):
    return FeatureSequence(modality, Tensor(rng.normal(size=(n, d))), mask)


# Configuration


def test_defaults():
    cfg = ModelConfig()
    assert (cfg.d_model, cfg.n_heads, cfg.ffn_hidden) == (64, 8, 256)
    assert cfg.enabled_modalities == (Modality.video, Modality.audio, Modality.text)


def test_video_is_mandatory():
    with pytest.raises(ValidationError):
        ModelConfig(enabled_modalities=["audio", "text"])


def test_heads_must_divide_d_model():
    with pytest.raises(ValidationError):
        ModelConfig(d_model=10, n_heads=4)


def test_unknown_field_rejected():
    with pytest.raises(ValidationError):
        ModelConfig(d_modle=8)


# Initialisation and counting


def test_init_is_deterministic():
    a, b = init_model(tiny_config(seed=3)), init_model(tiny_config(seed=3))
    assert a.names() == b.names()
    for name in a.names():
        np.testing.assert_array_equal(a[name].data, b[name].data)


def test_interaction_weights_start_at_configured_values():
    model = init_model(ModelConfig(d_model=16, n_heads=4))
    assert model["interaction.w_tv"].item() == 2.0
    assert model["interaction.w_ta"].item() == 1.0


def test_weights_within_fan_in_bound():
    config = tiny_config(seed=11)
    model = init_model(config)
    for layout in parameter_layout(config):
        if layout.init == "uniform":
            assert np.all(np.abs(model[layout.name].data) < 1.0 / math.sqrt(layout.fan_in)), layout.name


@pytest.mark.parametrize(
    "overrides",
    [
        {},
        {"use_layer_norm": False},
        {"use_output_proj": False},
        {"enabled_modalities": ["video"]},
        {"enabled_modalities": ["video", "audio"]},
        {"enabled_modalities": ["video", "text"]},
        {"use_autoencoder": False},
        {"use_fusion": False},
        {"use_interaction": False},
        {"interaction_weights_learnable": False},
        {"n_autoencoder_layers": 2, "n_fusion_layers": 3},
        {"d_video": 6, "d_audio": 5, "d_text": 3},
    ],
)
def test_enumerated_count_equals_closed_form(overrides):
    config = tiny_config(seed=0, **overrides)
    model = init_model(config)
    assert count_params(model) == closed_form_param_count(config)
    assert sum(param_breakdown(model).values()) == count_params(model)


def test_head_alone_has_width_plus_one():
    model = init_model(ModelConfig(d_model=4, n_heads=2))
    assert param_breakdown(model)["head"] == 5


def test_doubling_ffn_hidden_adds_ffn_delta():
    small = ModelConfig(d_video=6, d_audio=5, d_text=3, d_model=8, n_heads=2, ffn_hidden=16)
    large = ModelConfig(d_video=6, d_audio=5, d_text=3, d_model=8, n_heads=2, ffn_hidden=32)
    delta_f, D = 16, 8
    projection = sum((d + D + 1) * delta_f for d in (6, 5, 3))
    post_fusion = 3 * (2 * D + 1) * delta_f
    assert count_params(init_model(large)) - count_params(init_model(small)) == projection + post_fusion


def test_learnable_interaction_weights_add_two():
    learnable = init_model(tiny_config(seed=0))
    frozen = init_model(tiny_config(seed=0, interaction_weights_learnable=False))
    assert count_params(learnable) - count_params(frozen) == 2
    assert "interaction.w_tv" not in frozen.trainable
    assert frozen["interaction.w_tv"].item() == 2.0


# Stages


def test_autoencoder_with_zero_weights_emits_positional_row(tiny_model):
    zero = tiny_model.map(lambda name, a: np.zeros_like(a))
    out = modal_autoencoder_forward(FeatureSequence(Modality.video, Tensor(np.zeros((1, 4)))), zero)
    np.testing.assert_array_equal(out.data, sinusoidal_positional_encoding(1, 8).data)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_autoencoder_output_shape(rng, tiny_model, n):
    assert modal_autoencoder_forward(seq(rng, Modality.text, n), tiny_model).shape == (n, 8)


def test_autoencoder_rejects_disabled_modality(rng):
    model = init_model(tiny_config(seed=0, enabled_modalities=["video"]))
    with pytest.raises(ContractError):
        modal_autoencoder_forward(seq(rng, Modality.audio, 3), model)


def test_autoencoder_rejects_wrong_width(rng, tiny_model):
    with pytest.raises(ShapeError):
        modal_autoencoder_forward(seq(rng, Modality.video, 3, d=5), tiny_model)


def test_fusion_of_video_alone_is_self_attention_block(rng, tiny_model):
    v = Tensor(rng.normal(size=(4, 8)))
    fused_v, fused_a, fused_t = modal_fusion_forward(v, None, None, None, tiny_model)
    assert fused_a is None and fused_t is None

    m, eps = tiny_model, tiny_model.config.layer_norm_eps
    z = E.add(v, multi_head_attention(v, v, v, m.attention("fusion.layer0.attn", 2)))
    z = E.layer_norm(z, m["fusion.layer0.norm.gain"], m["fusion.layer0.norm.bias"], eps)
    hidden = E.relu(E.add_bias(E.matmul(z, m["fusion.ffn.video.w1"]), m["fusion.ffn.video.b1"]))
    ffn = E.add_bias(E.matmul(hidden, m["fusion.ffn.video.w2"]), m["fusion.ffn.video.b2"])
    expected = E.layer_norm(E.add(z, ffn), m["fusion.ffn.video.norm.gain"], m["fusion.ffn.video.norm.bias"], eps)
    np.testing.assert_allclose(fused_v.data, expected.data, rtol=1e-12, atol=1e-12)


def test_fusion_preserves_segment_lengths(rng, tiny_model):
    v, a, t = (Tensor(rng.normal(size=(n, 8))) for n in (5, 5, 2))
    fused = modal_fusion_forward(v, a, t, None, tiny_model)
    assert [x.shape for x in fused] == [(5, 8), (5, 8), (2, 8)]


def test_fusion_ignores_padded_video_rows(rng, tiny_model):
    v, a, t = rng.normal(size=(3, 8)), rng.normal(size=(3, 8)), rng.normal(size=(2, 8))
    masks = {Modality.video: PaddingMask(np.array([True, True, False]))}
    base = modal_fusion_forward(Tensor(v), Tensor(a), Tensor(t), masks, tiny_model)
    v[2] += 10.0
    changed = modal_fusion_forward(Tensor(v), Tensor(a), Tensor(t), masks, tiny_model)
    np.testing.assert_array_equal(base[0].data[:2], changed[0].data[:2])
    np.testing.assert_array_equal(base[1].data, changed[1].data)
    np.testing.assert_array_equal(base[2].data, changed[2].data)


def test_fusion_rejects_wrong_width(rng, tiny_model):
    with pytest.raises(ShapeError):
        modal_fusion_forward(Tensor(rng.normal(size=(3, 6))), None, None, None, tiny_model)


def test_interaction_with_zero_audio_weight_is_text_video_branch(rng, tiny_model):
    model = tiny_model.replace({"interaction.w_ta": Tensor([0.0])})
    v, a, t = (Tensor(rng.normal(size=(n, 8))) for n in (4, 4, 3))
    tv, _ = interaction_branches(v, a, t, None, model)
    z = feature_interaction_forward(v, a, t, None, model)
    np.testing.assert_array_equal(z.data, 2.0 * tv.data)


def test_interaction_is_linear_in_weights(rng, tiny_model):
    v, a, t = (Tensor(rng.normal(size=(n, 8))) for n in (4, 4, 3))
    base = feature_interaction_forward(v, a, t, None, tiny_model)
    doubled = tiny_model.replace({"interaction.w_tv": Tensor([4.0]), "interaction.w_ta": Tensor([2.0])})
    np.testing.assert_array_equal(feature_interaction_forward(v, a, t, None, doubled).data, 2.0 * base.data)


@pytest.mark.parametrize("n_c,n_t", [(1, 5), (6, 1), (3, 3), (7, 2)])
def test_interaction_output_follows_clip_count(rng, tiny_model, n_c, n_t):
    v, a, t = Tensor(rng.normal(size=(n_c, 8))), Tensor(rng.normal(size=(n_c, 8))), Tensor(rng.normal(size=(n_t, 8)))
    assert feature_interaction_forward(v, a, t, None, tiny_model).shape == (n_c, 8)


def test_interaction_rejects_clip_mismatch(rng, tiny_model):
    v, a, t = (Tensor(rng.normal(size=(n, 8))) for n in (4, 3, 2))
    with pytest.raises(ShapeError):
        feature_interaction_forward(v, a, t, None, tiny_model)


def test_interaction_without_text_attends_over_own_clips(rng):
    model = init_model(tiny_config(seed=2, enabled_modalities=["video", "audio"]))
    v, a = Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(4, 8)))
    tv, ta = interaction_branches(v, a, None, None, model)
    np.testing.assert_allclose(tv.data, multi_head_attention(v, v, v, model.attention("interaction.text_video.attn", 2)).data)
    np.testing.assert_allclose(ta.data, multi_head_attention(a, a, a, model.attention("interaction.text_audio.attn", 2)).data)


def test_head_with_zero_weights_scores_zero(rng, tiny_model):
    zero = tiny_model.replace({"head.w": Tensor(np.zeros((8, 1))), "head.b": Tensor([0.0])})
    pred = saliency_head_forward(Tensor(rng.normal(size=(5, 8))), zero)
    assert len(pred) == 5
    np.testing.assert_array_equal(pred.values, np.zeros(5))


# Loss


def test_loss_is_zero_at_truth():
    pred = SaliencyPrediction(Tensor([[0.2], [0.9]]))
    assert mse_loss(pred, np.array([0.2, 0.9])).item() == 0.0


def test_loss_on_known_values():
    pred = SaliencyPrediction(Tensor([[0.0], [0.0]]))
    assert mse_loss(pred, np.array([1.0, 0.0])).item() == pytest.approx(0.5)


def test_loss_averages_over_valid_clips_only():
    pred = SaliencyPrediction(Tensor([[0.5], [0.0], [3.0]]))
    mask = PaddingMask(np.array([True, True, False]))
    expected = ((0.5 - 1.0) ** 2 + (0.0 - 0.5) ** 2) / 2
    assert mse_loss(pred, np.array([1.0, 0.5, 0.0]), mask).item() == pytest.approx(expected)


def test_loss_needs_a_valid_clip():
    pred = SaliencyPrediction(Tensor([[0.5], [0.0]]))
    with pytest.raises(ContractError):
        mse_loss(pred, np.array([1.0, 0.0]), np.array([False, False]))


def test_loss_rejects_non_finite_truth():
    with pytest.raises(ContractError):
        mse_loss(SaliencyPrediction(Tensor([[0.5]])), np.array([np.nan]))


# End to end


def test_forward_is_deterministic(rng, tiny_model):
    sample = make_sample(rng, n_clips=5, n_tokens=3)
    first, second = cfsum_forward(sample, tiny_model), cfsum_forward(sample, tiny_model)
    np.testing.assert_array_equal(first.values, second.values)


def test_one_score_per_clip_across_lengths(rng, tiny_model):
    for n_c in range(1, 17):
        n_t = int(rng.integers(1, 9))
        sample = make_sample(rng, n_clips=n_c, n_tokens=n_t)
        assert len(cfsum_forward(sample, tiny_model)) == n_c


def test_padded_positions_leave_valid_scores_unchanged(rng, tiny_model):
    sample = make_sample(rng, n_clips=4, n_tokens=3, clip_valid=[True, True, True, False], token_valid=[True, False, True])
    base = cfsum_forward(sample, tiny_model).values

    def perturbed(s):
        return FeatureSequence(s.modality, Tensor(s.features.data + np.where(~s.mask.valid[:, None], 50.0, 0.0)), s.mask)

    changed = type(sample)(
        sample_id=sample.sample_id,
        video=perturbed(sample.video),
        audio=perturbed(sample.audio),
        text=perturbed(sample.text),
        saliency=sample.saliency,
    )
    np.testing.assert_array_equal(cfsum_forward(changed, tiny_model).values[:3], base[:3])


def test_disabled_modalities_in_sample_are_ignored(rng):
    video_only = init_model(tiny_config(seed=4, enabled_modalities=["video"]))
    sample = make_sample(rng, n_clips=4, n_tokens=2)
    bare = MultiModalSample(sample_id="bare", video=sample.video, saliency=sample.saliency)
    np.testing.assert_array_equal(cfsum_forward(sample, video_only).values, cfsum_forward(bare, video_only).values)


def test_enabled_modality_missing_from_sample(rng, tiny_model):
    with pytest.raises(ContractError):
        cfsum_forward(make_sample(rng, text=False), tiny_model)


@pytest.mark.parametrize("overrides", [{"use_fusion": False}, {"use_interaction": False}, {"use_autoencoder": False}])
def test_module_ablations_still_score_every_clip(rng, overrides):
    model = init_model(tiny_config(seed=1, **overrides))
    assert len(cfsum_forward(make_sample(rng, n_clips=5, n_tokens=2), model)) == 5


@pytest.mark.parametrize("seed", range(5))
def test_full_model_gradients_match_finite_differences(seed):
    results = run_model_suite(seed=seed)
    failed = [r.to_dict() for r in results if not r.passed]
    assert not failed
    assert any(r.name.startswith("model_no_norm.") for r in results)


VIDEO_SUBSETS = [["video"], ["video", "audio"], ["video", "text"], ["video", "audio", "text"]]


@pytest.mark.parametrize("modalities", VIDEO_SUBSETS, ids="+".join)
def test_one_score_per_clip_for_every_video_subset(rng, modalities):
    model = init_model(tiny_config(seed=2, enabled_modalities=modalities))
    for n_c in range(1, 9):
        for n_t in range(1, 7):
            scores = cfsum_forward(make_sample(rng, n_clips=n_c, n_tokens=n_t), model).values
            assert scores.shape == (n_c,)
            assert np.all(np.isfinite(scores))


def _with_padding_noise(rng, s):
    noise = rng.normal(scale=10.0, size=s.features.shape) * ~s.mask.valid[:, None]
    return FeatureSequence(s.modality, Tensor(s.features.data + noise), s.mask)


def test_random_padding_never_moves_valid_scores(rng, tiny_model):
    for case in range(100):
        n_c, n_t = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        clip_valid = rng.random(n_c) < 0.6
        clip_valid[rng.integers(n_c)] = True
        token_valid = rng.random(n_t) < 0.6
        token_valid[rng.integers(n_t)] = True
        sample = make_sample(rng, n_clips=n_c, n_tokens=n_t, clip_valid=clip_valid, token_valid=token_valid)
        base = cfsum_forward(sample, tiny_model).values
        changed = MultiModalSample(
            sample_id=sample.sample_id,
            video=_with_padding_noise(rng, sample.video),
            audio=_with_padding_noise(rng, sample.audio),
            text=_with_padding_noise(rng, sample.text),
            saliency=sample.saliency,
        )
        moved = cfsum_forward(changed, tiny_model).values
        np.testing.assert_array_equal(moved[clip_valid], base[clip_valid], err_msg=f"case {case}")
