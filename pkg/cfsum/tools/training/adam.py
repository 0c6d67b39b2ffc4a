import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from cfsum.errors import ShapeError, TrainingDivergedError
from cfsum.tools.tensor.engine import Tensor
from cfsum.tools.training.config import TrainConfig


@dataclass(frozen=True)
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: Mapping[str, Tensor]) -> AdamState:
    return AdamState(
        m={name: np.zeros(p.shape) for name, p in params.items()},
        v={name: np.zeros(p.shape) for name, p in params.items()},
        t=0,
    )


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> Tuple[Dict[str, Tensor], AdamState]:
    """One Adam update; weight decay is decoupled unless ``cfg.coupled_l2``.

    Returns fresh parameter tensors and a fresh state; inputs are left untouched.
    """
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    m_new, v_new, updated = {}, {}, {}
    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.shape:
            raise ShapeError(f"gradient for '{name}' has shape {g.shape}, parameter has {param.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter '{name}'", {"parameter": name, "step": t})
        theta = param.data
        if cfg.coupled_l2 and cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        step = m_hat / (np.sqrt(v_hat) + cfg.eps)
        if not cfg.coupled_l2:
            step = step + cfg.weight_decay * theta
        updated[name] = Tensor(theta - cfg.learning_rate * step, requires_grad=param.requires_grad, name=param.name)
        m_new[name], v_new[name] = m, v
    return updated, AdamState(m_new, v_new, t)
