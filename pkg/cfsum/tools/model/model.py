"""
CFSum parameters: layout, deterministic initialisation and counting.

Parameter names are dotted paths grouped by module::

    autoencoder.<modality>.layer<i>.attn.{w_q,w_k,w_v,w_o}
    autoencoder.<modality>.layer<i>.norm.{gain,bias}
    autoencoder.<modality>.mlp.{w1,b1,w2,b2}
    fusion.layer<i>.attn.*, fusion.layer<i>.norm.*
    fusion.ffn.<modality>.{w1,b1,w2,b2}, fusion.ffn.<modality>.norm.*
    interaction.text_video.attn.*, interaction.text_audio.attn.*
    interaction.w_tv, interaction.w_ta
    head.w, head.b
"""

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import structlog

from cfsum.errors import ContractError, ShapeError
from cfsum.tools.attention.attention import AttentionParams
from cfsum.tools.model.config import Modality, ModelConfig
from cfsum.tools.tensor.engine import Tensor

logger = structlog.get_logger(__name__)

MODULES = ("autoencoder", "fusion", "interaction", "head")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    fan_in: int
    init: str = "uniform"  # uniform | ones | zeros | constant
    value: float = 0.0
    trainable: bool = True

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _attention_specs(prefix: str, d_in: int, d_model: int, config: ModelConfig) -> List[ParamSpec]:
    specs = [ParamSpec(f"{prefix}.{w}", (d_in, d_model), d_in) for w in ("w_q", "w_k", "w_v")]
    if config.use_output_proj:
        specs.append(ParamSpec(f"{prefix}.w_o", (d_model, d_model), d_model))
    return specs


def _norm_specs(prefix: str, d: int, config: ModelConfig) -> List[ParamSpec]:
    if not config.use_layer_norm:
        return []
    return [ParamSpec(f"{prefix}.gain", (d,), d, "ones"), ParamSpec(f"{prefix}.bias", (d,), d, "zeros")]


def _mlp_specs(prefix: str, d_in: int, hidden: int, d_out: int) -> List[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.w1", (d_in, hidden), d_in),
        ParamSpec(f"{prefix}.b1", (hidden,), d_in),
        ParamSpec(f"{prefix}.w2", (hidden, d_out), hidden),
        ParamSpec(f"{prefix}.b2", (d_out,), hidden),
    ]


def parameter_layout(config: ModelConfig) -> List[ParamSpec]:
    """Ordered parameter specs; the order fixes the draw order of the init generator."""
    D, F = config.d_model, config.ffn_hidden
    specs: List[ParamSpec] = []
    for modality in config.enabled_modalities:
        d = config.dim(modality)
        base = f"autoencoder.{modality.value}"
        if config.use_autoencoder:
            for layer in range(config.n_autoencoder_layers):
                specs += _attention_specs(f"{base}.layer{layer}.attn", d, d, config)
                specs += _norm_specs(f"{base}.layer{layer}.norm", d, config)
        specs += _mlp_specs(f"{base}.mlp", d, F, D)

    if config.use_fusion:
        for layer in range(config.n_fusion_layers):
            specs += _attention_specs(f"fusion.layer{layer}.attn", D, D, config)
            specs += _norm_specs(f"fusion.layer{layer}.norm", D, config)
        for modality in config.enabled_modalities:
            specs += _mlp_specs(f"fusion.ffn.{modality.value}", D, F, D)
            specs += _norm_specs(f"fusion.ffn.{modality.value}.norm", D, config)

    if config.use_interaction:
        learnable = config.interaction_weights_learnable
        specs += _attention_specs("interaction.text_video.attn", D, D, config)
        if config.enabled(Modality.audio):
            specs += _attention_specs("interaction.text_audio.attn", D, D, config)
        specs.append(ParamSpec("interaction.w_tv", (1,), 1, "constant", config.w_tv_init, learnable))
        if config.enabled(Modality.audio):
            specs.append(ParamSpec("interaction.w_ta", (1,), 1, "constant", config.w_ta_init, learnable))

    specs.append(ParamSpec("head.w", (D, 1), D))
    specs.append(ParamSpec("head.b", (1,), D))
    return specs


@dataclass(frozen=True)
class CFSumModel:
    config: ModelConfig
    params: Mapping[str, Tensor]
    trainable: frozenset

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise ContractError(f"model has no parameter '{name}'")

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def named_trainable(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.params.items():
            if name in self.trainable:
                yield name, tensor

    def attention(self, prefix: str, n_heads: int) -> AttentionParams:
        w_o = f"{prefix}.w_o"
        return AttentionParams(
            w_q=self[f"{prefix}.w_q"],
            w_k=self[f"{prefix}.w_k"],
            w_v=self[f"{prefix}.w_v"],
            w_o=self.params.get(w_o) if self.config.use_output_proj else None,
            n_heads=n_heads,
        )

    def replace(self, updates: Mapping[str, Tensor]) -> "CFSumModel":
        """New model sharing every tensor except those in ``updates``."""
        params = OrderedDict(self.params)
        for name, tensor in updates.items():
            if name not in params:
                raise ContractError(f"model has no parameter '{name}'")
            if tensor.shape != params[name].shape:
                raise ShapeError(f"parameter '{name}' expects shape {params[name].shape}, got {tensor.shape}")
            params[name] = tensor
        return CFSumModel(self.config, params, self.trainable)

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "CFSumModel":
        return self.replace(
            {
                name: Tensor(fn(name, t.data), requires_grad=t.requires_grad)
                for name, t in self.params.items()
            }
        )

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()


def init_model(config: ModelConfig, rng: Optional[np.random.Generator] = None) -> CFSumModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights drawn in layout order from ``config.seed``."""
    rng = rng or np.random.default_rng(config.seed)
    params: Dict[str, Tensor] = OrderedDict()
    trainable = set()
    for layout in parameter_layout(config):
        if layout.init == "uniform":
            bound = 1.0 / math.sqrt(layout.fan_in)
            data = rng.uniform(-bound, bound, size=layout.shape)
        elif layout.init == "ones":
            data = np.ones(layout.shape)
        elif layout.init == "zeros":
            data = np.zeros(layout.shape)
        else:
            data = np.full(layout.shape, layout.value)
        params[layout.name] = Tensor(data, requires_grad=layout.trainable, name=layout.name)
        if layout.trainable:
            trainable.add(layout.name)
    model = CFSumModel(config, params, frozenset(trainable))
    logger.debug("Model initialised", tensors=len(params), parameters=count_params(model), seed=config.seed)
    return model


def count_params(model: CFSumModel) -> int:
    """Number of trainable scalars."""
    return sum(tensor.size for _, tensor in model.named_trainable())


def param_breakdown(model: CFSumModel) -> Dict[str, int]:
    totals = {module: 0 for module in MODULES}
    for name, tensor in model.named_trainable():
        totals[name.split(".", 1)[0]] += tensor.size
    return totals


def closed_form_param_count(config: ModelConfig) -> int:
    """
    attn(d)  = 3 d^2 + [d^2 if output projection]
    norm(d)  = [2 d if layer norm]
    mlp(i,o) = i F + F + F o + o
    total    = sum_m ( L_ae (attn(d_m) + norm(d_m)) [if autoencoder] + mlp(d_m, D) )
             + [L_f (attn(D) + norm(D)) + sum_m (mlp(D, D) + norm(D))]   if fusion
             + [attn(D) (1 + audio) + (1 + audio) if learnable]          if interaction
             + D + 1
    """
    D, F = config.d_model, config.ffn_hidden

    def attn(d):
        return 3 * d * d + (d * d if config.use_output_proj else 0)

    def norm(d):
        return 2 * d if config.use_layer_norm else 0

    def mlp(i, o):
        return i * F + F + F * o + o

    total = 0
    for modality in config.enabled_modalities:
        d = config.dim(modality)
        if config.use_autoencoder:
            total += config.n_autoencoder_layers * (attn(d) + norm(d))
        total += mlp(d, D)
    if config.use_fusion:
        total += config.n_fusion_layers * (attn(D) + norm(D))
        total += len(config.enabled_modalities) * (mlp(D, D) + norm(D))
    if config.use_interaction:
        branches = 1 + int(config.enabled(Modality.audio))
        total += branches * attn(D)
        if config.interaction_weights_learnable:
            total += branches
    return total + D + 1
