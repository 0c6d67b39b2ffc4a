from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import structlog

from cfsum.constants import GRADCHECK_ERROR_FLOOR, GRADCHECK_STEP, GRADCHECK_TOLERANCE
from cfsum.tools.tensor import engine as E
from cfsum.tools.tensor.engine import Tape, Tensor, finite_diff_grad

logger = structlog.get_logger(__name__)


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    coords_checked: int
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_rel_error": self.max_rel_error,
            "coords_checked": self.coords_checked,
            "passed": self.passed,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRADCHECK_ERROR_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def sample_coords(size: int, max_coords: Optional[int], rng: np.random.Generator) -> Optional[List[int]]:
    if max_coords is None or size <= max_coords:
        return None
    return sorted(rng.choice(size, size=max_coords, replace=False).tolist())


def check_gradient(
    name: str,
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    h: float = GRADCHECK_STEP,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckResult:
    """Compare tape gradients of scalar ``fn(*inputs)`` against central differences for every input."""
    rng = rng or np.random.default_rng(0)
    leaves = [Tensor(arr, requires_grad=True) for arr in inputs]
    tape = Tape()
    with tape:
        loss = fn(*leaves)
    tape.backward(loss)

    worst, checked = 0.0, 0
    for idx, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)

        def f(t, idx=idx):
            args = [Tensor(arr) for arr in inputs]
            args[idx] = t
            return fn(*args)

        coords = sample_coords(leaf.size, max_coords, rng)
        numeric = finite_diff_grad(f, Tensor(inputs[idx]), h, coords).flat
        picked = np.arange(leaf.size) if coords is None else np.asarray(coords)
        errors = relative_error(analytic.reshape(-1)[picked], numeric[picked])
        worst = max(worst, float(errors.max()))
        checked += len(picked)
    result = GradcheckResult(name, worst, checked)
    logger.debug("Gradient checked", op=name, max_rel_error=worst, passed=result.passed)
    return result


@dataclass
class OpCase:
    name: str
    fn: Callable[..., Tensor]
    inputs: List[np.ndarray] = field(default_factory=list)


def op_cases(rng: np.random.Generator) -> List[OpCase]:
    """One scalar-valued case per differentiable engine op, inputs drawn from [-1, 1]."""

    def u(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    weights_3x2 = Tensor(u(3, 2))
    weights_3x4 = Tensor(u(3, 4))
    weights_4x3 = Tensor(u(4, 3))
    weights_2x4 = Tensor(u(2, 4))
    mask = np.array([[True, False, True, True], [True, True, False, True], [False, True, True, True]])

    def weighted(t, w):
        return E.sum_all(E.mul(t, w))

    return [
        OpCase("matmul", lambda a, b: weighted(E.matmul(a, b), weights_3x2), [u(3, 4), u(4, 2)]),
        OpCase("transpose", lambda a: weighted(E.transpose(a), weights_3x4), [u(4, 3)]),
        OpCase("add", lambda a, b: weighted(E.add(a, b), weights_3x4), [u(3, 4), u(3, 4)]),
        OpCase("sub", lambda a, b: weighted(E.sub(a, b), weights_3x4), [u(3, 4), u(3, 4)]),
        OpCase("mul", lambda a, b: E.sum_all(E.mul(a, b)), [u(3, 4), u(3, 4)]),
        OpCase("scale", lambda a: weighted(E.scale(a, -1.7), weights_3x4), [u(3, 4)]),
        OpCase("scale_by", lambda a, w: weighted(E.scale_by(a, w), weights_3x4), [u(3, 4), u(1)]),
        OpCase("relu", lambda a: weighted(E.relu(a), weights_3x4), [u(3, 4)]),
        OpCase("tanh", lambda a: weighted(E.tanh(a), weights_3x4), [u(3, 4)]),
        OpCase("add_bias", lambda a, b: weighted(E.add_bias(a, b), weights_3x4), [u(3, 4), u(4)]),
        OpCase("softmax_rows", lambda a: weighted(E.softmax_rows(a), weights_3x4), [u(3, 4)]),
        OpCase("softmax_rows_masked", lambda a: weighted(E.softmax_rows(a, mask), weights_3x4), [u(3, 4)]),
        OpCase(
            "concat_rows",
            lambda a, b: weighted(E.concat_rows([a, b]), weights_3x4),
            [u(2, 4), u(1, 4)],
        ),
        OpCase(
            "split_rows",
            lambda a: E.add(weighted(E.split_rows(a, [1, 2])[1], weights_2x4), E.sum_all(E.split_rows(a, [1, 2])[0])),
            [u(3, 4)],
        ),
        OpCase("slice_cols", lambda a: weighted(E.slice_cols(a, 1, 3), weights_3x2), [u(3, 4)]),
        OpCase(
            "concat_cols",
            lambda a, b: weighted(E.concat_cols([a, b]), weights_3x4),
            [u(3, 1), u(3, 3)],
        ),
        OpCase(
            "layer_norm",
            lambda a, g, b: weighted(E.layer_norm(a, g, b), weights_4x3),
            [u(4, 3), u(3), u(3)],
        ),
    ]


def run_op_suite(seed: int, max_coords: Optional[int] = None) -> List[GradcheckResult]:
    rng = np.random.default_rng(seed)
    return [check_gradient(case.name, case.fn, case.inputs, max_coords=max_coords, rng=rng) for case in op_cases(rng)]
