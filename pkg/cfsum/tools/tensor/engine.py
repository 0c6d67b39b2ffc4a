"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Tensors are immutable values: every op returns a new tensor and never touches
its inputs' data. Gradients are only recorded while a ``Tape`` is active (see
``Tape.recording``) and at least one input has ``requires_grad`` set. One tape
supports exactly one ``backward``; call ``reset`` before reusing it.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import structlog

from cfsum.constants import MASK_FILL_VALUE
from cfsum.errors import ContractError, DegenerateRowError, ShapeError, TapeStateError

logger = structlog.get_logger(__name__)

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("_data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self._init(arr, requires_grad, name)

    def _init(self, arr: np.ndarray, requires_grad: bool, name: Optional[str]) -> None:
        if any(dim <= 0 for dim in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {tuple(arr.shape)}")
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        out = cls.__new__(cls)
        out._init(arr, requires_grad, None)
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def zeros(*shape: int) -> Tensor:
    return Tensor._wrap(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor._wrap(np.ones(shape))


@dataclass(frozen=True)
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """Ordered record of differentiable ops; entries are appended in execution order."""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._consumed = False
        self._tokens: list = []

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._tokens.pop())

    @contextmanager
    def recording(self) -> Iterator["Tape"]:
        with self:
            yield self

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardRule) -> None:
        if self._consumed:
            raise TapeStateError("tape already consumed by backward(); call reset() before recording")
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def reset(self) -> None:
        self.entries = []
        self._consumed = False

    def _dependency_graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        for entry in self.entries:
            out_id = id(entry.output)
            graph.add_node(out_id)
            for tensor in entry.inputs:
                graph.add_edge(id(tensor), out_id)
        return graph

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad leaf that the scalar ``loss`` depends on."""
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise TapeStateError("second backward() on the same tape; call reset() first")

        graph = self._dependency_graph()
        loss_id = id(loss)
        if loss_id not in graph:
            if not loss.requires_grad:
                raise ContractError("loss is not reachable from any recorded op")
            live = {loss_id}
        else:
            live = nx.ancestors(graph, loss_id) | {loss_id}

        produced = {id(entry.output) for entry in self.entries}
        grads = {loss_id: np.ones(loss.shape)}
        visited = 0
        for entry in reversed(self.entries):
            out_id = id(entry.output)
            if out_id not in live:
                continue
            upstream = grads.pop(out_id, None)
            if upstream is None:
                continue
            visited += 1
            for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad

        leaves = {}
        for entry in self.entries:
            for tensor in entry.inputs:
                if tensor.requires_grad and id(tensor) not in produced:
                    leaves[id(tensor)] = tensor
        if loss_id not in produced:
            leaves[loss_id] = loss
        for key, tensor in leaves.items():
            if key in grads:
                grad = grads[key]
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad

        self._consumed = True
        logger.debug("Backward finished", ops=len(self.entries), visited=visited, leaves=len(leaves))


@contextmanager
def maybe_recording(tape: Optional[Tape]) -> Iterator[Optional[Tape]]:
    """Activate ``tape`` for the block when given, otherwise leave the current state alone."""
    if tape is None or _active_tape.get() is tape:
        yield tape
        return
    with tape:
        yield tape


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    tape = tape or _active_tape.get()
    if tape is None:
        raise ContractError("backward() called with no active tape")
    tape.backward(loss)


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, rule: BackwardRule) -> Tensor:
    tape = _active_tape.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=track)
    if track:
        tape.record(op, inputs, result, rule)
    return result


def _require_2d(name: str, x: Tensor) -> None:
    if len(x.shape) != 2:
        raise ShapeError(f"{name} expects a 2-d tensor, got shape {x.shape}")


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def rule(g):
        return g @ b_data.T, a_data.T @ g

    return _emit("matmul", (a, b), a_data @ b_data, rule)


def transpose(x: Tensor) -> Tensor:
    _require_2d("transpose", x)
    return _emit("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _emit("mul", (a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", (x,), x.data * factor, lambda g: (g * factor,))


def scale_by(x: Tensor, weight: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the single-element tensor ``weight``."""
    if weight.size != 1:
        raise ShapeError(f"scale_by: weight must hold one element, got shape {weight.shape}")
    x_data = x.data
    w = float(weight.data.reshape(-1)[0])

    def rule(g):
        return g * w, np.array([np.sum(g * x_data)]).reshape(weight.shape)

    return _emit("scale_by", (x, weight), x_data * w, rule)


def relu(x: Tensor) -> Tensor:
    x_data = x.data
    return _emit("relu", (x,), np.maximum(x_data, 0.0), lambda g: (g * (x_data > 0.0),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


ELEMENTWISE_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "scale_by": scale_by,
    "relu": relu,
    "tanh": tanh,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE_OPS[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op '{op}'", {"supported": sorted(ELEMENTWISE_OPS)})
    return fn(*args)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of an m x n tensor."""
    _require_2d("add_bias", x)
    if bias.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias shape {bias.shape} does not match {x.shape}")
    return _emit("add_bias", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0)))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit("sum", (x,), np.array([x.data.sum()]), lambda g: (np.full(shape, g[0]),))


# Row / column structure


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    for part in parts:
        _require_2d("concat_rows", part)
    width = parts[0].shape[1]
    for part in parts[1:]:
        if part.shape[1] != width:
            raise ShapeError(f"concat_rows: column mismatch {parts[0].shape} vs {part.shape}")
    bounds = np.cumsum([p.shape[0] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=0))

    return _emit("concat_rows", tuple(parts), np.concatenate([p.data for p in parts], axis=0), rule)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d("slice_rows", x)
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit("slice_rows", (x,), x.data[start:stop].copy(), rule)


def split_rows(x: Tensor, lengths: Sequence[int]) -> List[Tensor]:
    _require_2d("split_rows", x)
    if any(n <= 0 for n in lengths) or sum(lengths) != x.shape[0]:
        raise ShapeError(f"split_rows: lengths {list(lengths)} do not partition {x.shape[0]} rows")
    out, start = [], 0
    for n in lengths:
        out.append(slice_rows(x, start, start + n))
        start += n
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d("slice_cols", x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", (x,), x.data[:, start:stop].copy(), rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    for part in parts:
        _require_2d("concat_cols", part)
    rows = parts[0].shape[0]
    for part in parts[1:]:
        if part.shape[0] != rows:
            raise ShapeError(f"concat_cols: row mismatch {parts[0].shape} vs {part.shape}")
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=1))

    return _emit("concat_cols", tuple(parts), np.concatenate([p.data for p in parts], axis=1), rule)


# Normalisation


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row softmax; positions where ``mask`` is False come out as exact zeros."""
    _require_2d("softmax_rows", x)
    logits = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax_rows: mask shape {mask.shape} does not match {x.shape}")
        empty = np.flatnonzero(~mask.any(axis=1))
        if empty.size:
            raise DegenerateRowError(
                f"softmax_rows: row {int(empty[0])} has no unmasked entry", {"rows": empty.tolist()}
            )
        logits = np.where(mask, logits, MASK_FILL_VALUE)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (x,), y, rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _require_2d("layer_norm", x)
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    x_data = x.data
    mean = x_data.mean(axis=1, keepdims=True)
    centered = x_data - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gain_data = gain.data

    def rule(g):
        dxhat = g * gain_data
        dx = inv_std / d * (
            d * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", (x, gain, bias), xhat * gain_data + bias.data, rule)


# Finite differences


def finite_diff_grad(
    f: Callable[[Tensor], object],
    x: Tensor,
    h: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``.

    With ``coords`` only those flat positions are estimated; the rest are NaN.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_grad step must be positive, got {h}")
    base = x.data.reshape(-1).copy()
    picked = range(base.size) if coords is None else coords
    estimate = np.full(base.size, np.nan)
    for i in picked:
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        f_plus = _as_float(f(Tensor._wrap(plus.reshape(x.shape))))
        f_minus = _as_float(f(Tensor._wrap(minus.reshape(x.shape))))
        estimate[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor._wrap(estimate.reshape(x.shape))


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)
