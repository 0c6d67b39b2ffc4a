"""
Multi-head attention over single (unbatched) sequences.

The same routine serves intra-modal self-attention, the joint self-attention of
the fusion stage, and the clip-to-text cross-attention of the interaction stage.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple, Union

import numpy as np

from cfsum.constants import POSITIONAL_BASE
from cfsum.errors import ConfigError, DegenerateRowError, ShapeError
from cfsum.tools.tensor import engine as E
from cfsum.tools.tensor.engine import Tensor


@dataclass(frozen=True)
class PaddingMask:
    valid: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if valid.size == 0 or not valid.any():
            raise DegenerateRowError("padding mask has no valid position")
        valid.setflags(write=False)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def all_valid(cls, n: int) -> "PaddingMask":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def from_lengths(cls, n: int, valid_length: int) -> "PaddingMask":
        valid = np.zeros(n, dtype=bool)
        valid[:valid_length] = True
        return cls(valid)

    def __len__(self) -> int:
        return int(self.valid.size)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Optional[Tensor]
    n_heads: int

    def __post_init__(self):
        if self.n_heads <= 0:
            raise ConfigError(f"n_heads must be positive, got {self.n_heads}", key_path="n_heads")
        d_model = self.w_q.shape[1]
        if d_model % self.n_heads:
            raise ConfigError(f"d_model {d_model} is not divisible by n_heads {self.n_heads}", key_path="n_heads")
        if self.w_k.shape[1] != d_model or self.w_v.shape[1] != d_model:
            raise ShapeError(
                f"query/key/value projections disagree on d_model: {self.w_q.shape}, {self.w_k.shape}, {self.w_v.shape}"
            )
        if self.w_o is not None and self.w_o.shape != (d_model, d_model):
            raise ShapeError(f"output projection must be {(d_model, d_model)}, got {self.w_o.shape}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def multi_head_attention(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    params: AttentionParams,
    key_mask: Optional[PaddingMask] = None,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, List[np.ndarray]]]:
    """softmax((q Wq)_h (k Wk)_h^T / sqrt(d_k)) (v Wv)_h per head, heads concatenated, then W_o."""
    if k_in.shape[0] != v_in.shape[0]:
        raise ShapeError(f"keys and values differ in length: {k_in.shape} vs {v_in.shape}")
    n_q, n_k = q_in.shape[0], k_in.shape[0]
    if key_mask is None:
        key_mask = PaddingMask.all_valid(n_k)
    if len(key_mask) != n_k:
        raise ShapeError(f"key mask length {len(key_mask)} does not match {n_k} keys")

    q = E.matmul(q_in, params.w_q)
    k = E.matmul(k_in, params.w_k)
    v = E.matmul(v_in, params.w_v)
    logit_mask = np.broadcast_to(key_mask.valid, (n_q, n_k))
    scale = 1.0 / math.sqrt(params.d_k)

    heads, weights = [], []
    for h in range(params.n_heads):
        if params.n_heads == 1:
            q_h, k_h, v_h = q, k, v
        else:
            lo, hi = h * params.d_k, (h + 1) * params.d_k
            q_h, k_h, v_h = E.slice_cols(q, lo, hi), E.slice_cols(k, lo, hi), E.slice_cols(v, lo, hi)
        logits = E.scale(E.matmul(q_h, E.transpose(k_h)), scale)
        attn = E.softmax_rows(logits, logit_mask)
        if return_weights:
            weights.append(attn.numpy())
        heads.append(E.matmul(attn, v_h))

    out = heads[0] if len(heads) == 1 else E.concat_cols(heads)
    if params.w_o is not None:
        out = E.matmul(out, params.w_o)
    return (out, weights) if return_weights else out


@lru_cache(maxsize=64)
def _positional_table(n: int, d: int) -> np.ndarray:
    positions = np.arange(n, dtype=np.float64)[:, None]
    rates = POSITIONAL_BASE ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(positions / rates)
    table[:, 1::2] = np.cos(positions / rates)
    table.setflags(write=False)
    return table


def sinusoidal_positional_encoding(n: int, d: int) -> Tensor:
    if d <= 0 or d % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d}", key_path="d_model")
    if n <= 0:
        raise ShapeError(f"positional encoding needs a positive length, got {n}")
    return Tensor(_positional_table(n, d))
