import pandas as pd
import structlog

from cfsum.constants import GRADCHECK_MAX_COORDS
from cfsum.errors import GradcheckFailure
from cfsum.log_config import bind_run
from cfsum.tools.model.gradcheck import run_model_suite
from cfsum.tools.tensor.gradcheck import run_op_suite

logger = structlog.get_logger(__name__)


def cmd_gradcheck(seed: int = 0, full: bool = False) -> str:
    """Finite-difference check of every engine op, attention and the whole model.

    By default at most a few coordinates per tensor are sampled; ``full`` checks all of them.
    """
    bind_run(f"gradcheck-{seed}", command="gradcheck", seed=seed)
    max_coords = None if full else GRADCHECK_MAX_COORDS
    results = run_op_suite(seed) + run_model_suite(seed, max_coords)
    frame = pd.DataFrame([r.to_dict() for r in results])
    table = frame.to_string(index=False, float_format=lambda v: f"{v:.3e}")
    failed = frame.loc[~frame["passed"], "name"].tolist()
    if failed:
        logger.error("Gradient check failed", failed=failed)
        raise GradcheckFailure(f"{len(failed)} of {len(results)} gradient checks failed", {"failed": failed})
    return f"{table}\n\nall {len(results)} gradient checks passed"
