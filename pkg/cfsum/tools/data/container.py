"""
CFST: a minimal little-endian container of named arrays.

    magic   4 bytes  b"CFST"
    version u8       1
    count   u32
    entries, each:
        u16 name length, UTF-8 name
        u8 dtype (1 = u8 bytes, 2 = f64), u8 ndim, ndim x u64 dims
        row-major payload
"""

import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np
import structlog

from cfsum.constants import (
    CFST_DTYPE_F64,
    CFST_DTYPE_NAMES,
    CFST_DTYPE_U8,
    CFST_MAGIC,
    CFST_MAX_NAME_BYTES,
    CFST_VERSION,
)
from cfsum.errors import (
    BadMagicError,
    ContainerFormatError,
    ContractError,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from cfsum.tools.tensor.engine import Tensor

logger = structlog.get_logger(__name__)

_NUMPY_DTYPES = {CFST_DTYPE_U8: np.dtype("u1"), CFST_DTYPE_F64: np.dtype("<f8")}
_MAX_DIM = np.iinfo(np.intp).max

Entry = Union[Tensor, np.ndarray, bytes]


def _encode_entry(name: str, value: Entry) -> bytes:
    name_bytes = name.encode("utf-8")
    if not name_bytes or len(name_bytes) > CFST_MAX_NAME_BYTES:
        raise ContractError(f"entry name must be 1..{CFST_MAX_NAME_BYTES} UTF-8 bytes, got {len(name_bytes)}")
    if isinstance(value, (bytes, bytearray)):
        dtype, array = CFST_DTYPE_U8, np.frombuffer(bytes(value), dtype="u1")
    elif isinstance(value, Tensor):
        dtype, array = CFST_DTYPE_F64, value.data
    else:
        array = np.asarray(value)
        if array.dtype == np.uint8:
            dtype = CFST_DTYPE_U8
        else:
            dtype, array = CFST_DTYPE_F64, array.astype(np.float64)
    array = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype])
    header = struct.pack("<H", len(name_bytes)) + name_bytes
    header += struct.pack("<BB", dtype, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + array.tobytes(order="C")


def encode_container(entries: Mapping[str, Entry]) -> bytes:
    chunks = [CFST_MAGIC, struct.pack("<BI", CFST_VERSION, len(entries))]
    chunks += [_encode_entry(name, value) for name, value in entries.items()]
    return b"".join(chunks)


class _Reader:
    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0

    def take(self, n: int, entry: str) -> bytes:
        end = self.offset + n
        if end > len(self.buffer):
            raise TruncatedFileError(entry)
        chunk = self.buffer[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, entry: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), entry))


def decode_container(buffer: bytes) -> Dict[str, np.ndarray]:
    """All entries: f64 entries as float64 arrays, u8 entries as uint8 arrays."""
    if buffer[: len(CFST_MAGIC)] != CFST_MAGIC:
        raise BadMagicError(f"expected magic {CFST_MAGIC!r}, found {bytes(buffer[:len(CFST_MAGIC)])!r}")
    reader = _Reader(buffer)
    reader.offset = len(CFST_MAGIC)
    (version,) = reader.unpack("<B", "<header>")
    if version != CFST_VERSION:
        raise UnsupportedVersionError(f"container version {version} is not supported", {"version": version})
    (count,) = reader.unpack("<I", "<header>")

    entries: Dict[str, np.ndarray] = {}
    for index in range(count):
        placeholder = f"#{index}"
        (name_len,) = reader.unpack("<H", placeholder)
        try:
            name = reader.take(name_len, placeholder).decode("utf-8")
        except UnicodeDecodeError:
            raise ContainerFormatError(f"entry {placeholder} has a name that is not UTF-8")
        dtype, ndim = reader.unpack("<BB", name)
        if dtype not in _NUMPY_DTYPES:
            raise UnsupportedDtypeError(f"entry '{name}' has unsupported dtype {dtype}", {"entry": name, "dtype": dtype})
        dims = reader.unpack(f"<{ndim}Q", name) if ndim else ()
        numpy_dtype = _NUMPY_DTYPES[dtype]
        # python ints: a corrupted dim must not wrap around in int64
        n_items = math.prod(dims)
        payload = reader.take(n_items * numpy_dtype.itemsize, name)
        if any(dim > _MAX_DIM for dim in dims):
            raise ContainerFormatError(f"entry '{name}' has an out-of-range dimension {max(dims)}", {"entry": name})
        if name in entries:
            raise ContainerFormatError(f"duplicate entry '{name}'", {"entry": name})
        array = np.frombuffer(payload, dtype=numpy_dtype).reshape(dims).copy()
        entries[name] = array.astype(np.float64) if dtype == CFST_DTYPE_F64 else array

    if reader.offset != len(buffer):
        raise ContainerFormatError(
            f"{len(buffer) - reader.offset} trailing bytes after the last entry", {"trailing": len(buffer) - reader.offset}
        )
    return entries


def write_container(path: Union[str, Path], entries: Mapping[str, Entry]) -> Path:
    """Write atomically: a temporary sibling file is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_container(entries)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("Container written", path=str(path), entries=len(entries), bytes=len(payload))
    return path


def read_container(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes())


def write_tensor_file(path: Union[str, Path], tensors: Mapping[str, Tensor]) -> Path:
    return write_container(path, tensors)


def read_tensor_file(path: Union[str, Path]) -> Dict[str, Tensor]:
    """Float entries only, as Tensors; byte entries are skipped."""
    entries = read_container(path)
    tensors = {}
    for name, array in entries.items():
        if array.dtype != np.float64:
            logger.debug("Skipping byte entry", entry=name, dtype=CFST_DTYPE_NAMES[CFST_DTYPE_U8])
            continue
        tensors[name] = Tensor(array)
    return tensors
