import json
from collections import OrderedDict
from pathlib import Path
from typing import Union

import numpy as np
import structlog
from pydantic import ValidationError

from cfsum.constants import CHECKPOINT_CONFIG_ENTRY
from cfsum.errors import ContainerFormatError, format_validation_error
from cfsum.tools.data.container import read_container, write_container
from cfsum.tools.model.config import ModelConfig
from cfsum.tools.model.model import CFSumModel, parameter_layout
from cfsum.tools.tensor.engine import Tensor

logger = structlog.get_logger(__name__)


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path: Union[str, Path], model: CFSumModel) -> Path:
    """Config header entry first, then one f64 entry per parameter in layout order."""
    header = canonical_json(model.config.model_dump(mode="json")).encode("utf-8")
    entries = OrderedDict([(CHECKPOINT_CONFIG_ENTRY, header)])
    entries.update(model.params)
    path = write_container(path, entries)
    logger.info("Checkpoint saved", path=str(path), tensors=len(model.params))
    return path


def load_checkpoint(path: Union[str, Path]) -> CFSumModel:
    entries = read_container(path)
    header = entries.pop(CHECKPOINT_CONFIG_ENTRY, None)
    if header is None or header.dtype != np.uint8:
        raise ContainerFormatError(f"{path} has no '{CHECKPOINT_CONFIG_ENTRY}' header entry", {"path": str(path)})
    try:
        config = ModelConfig.model_validate(json.loads(header.tobytes().decode("utf-8")))
    except ValidationError as e:
        raise format_validation_error(e)
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ContainerFormatError(f"{path} has an unreadable config header", {"path": str(path)})

    params, trainable = OrderedDict(), set()
    for layout in parameter_layout(config):
        array = entries.pop(layout.name, None)
        if array is None:
            raise ContainerFormatError(f"checkpoint is missing parameter '{layout.name}'", {"entry": layout.name})
        if tuple(array.shape) != layout.shape:
            raise ContainerFormatError(
                f"parameter '{layout.name}' has shape {tuple(array.shape)}, config expects {layout.shape}",
                {"entry": layout.name},
            )
        params[layout.name] = Tensor(array, requires_grad=layout.trainable, name=layout.name)
        if layout.trainable:
            trainable.add(layout.name)
    if entries:
        raise ContainerFormatError(f"checkpoint has unexpected entries: {sorted(entries)}", {"entries": sorted(entries)})
    logger.info("Checkpoint loaded", path=str(path), tensors=len(params))
    return CFSumModel(config, params, frozenset(trainable))
