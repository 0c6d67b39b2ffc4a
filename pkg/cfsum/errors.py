"""
Error vocabulary shared by the library and the command line.

Every error carries a numeric ``code`` (see docs/docs/error-codes.md), the exit
status the CLI returns for it, and an optional structured ``details`` payload
that is attached to the log entry.
"""

from typing import Any, Dict, Optional


class CFSumError(Exception):
    code = 100
    error = "an unexpected system error occured"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        body: Dict[str, Any] = {"code": self.code, "error": self.error, "message": self.message}
        if self.details:
            body["details"] = self.details
        return body


class ShapeError(CFSumError):
    code = 101
    error = "dimension mismatch"


class ConfigError(CFSumError):
    code = 102
    error = "validation error"
    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None, details=None):
        details = dict(details or {})
        if key_path:
            details["key"] = key_path
        super().__init__(message, details)
        self.key_path = key_path


class ContractError(CFSumError):
    code = 103
    error = "precondition violated"


class TapeStateError(CFSumError):
    code = 104
    error = "invalid tape state"


class DegenerateRowError(CFSumError):
    code = 105
    error = "fully masked attention row"


class ContainerFormatError(CFSumError):
    code = 106
    error = "malformed tensor container"


class BadMagicError(ContainerFormatError):
    code = 107
    error = "bad magic bytes"


class UnsupportedVersionError(ContainerFormatError):
    code = 108
    error = "unsupported container version"


class UnsupportedDtypeError(ContainerFormatError):
    code = 109
    error = "unsupported entry dtype"


class TruncatedFileError(ContainerFormatError):
    code = 110
    error = "truncated container"

    def __init__(self, entry: str, message: Optional[str] = None):
        super().__init__(message or f"container truncated inside entry '{entry}'", {"entry": entry})
        self.entry = entry


class ManifestError(CFSumError):
    code = 111
    error = "invalid dataset manifest"


class UndefinedAPError(CFSumError):
    code = 112
    error = "average precision undefined without positives"


class TrainingDivergedError(CFSumError):
    code = 113
    error = "training diverged"


class EmptyDatasetError(CFSumError):
    code = 114
    error = "empty dataset"


class GradcheckFailure(CFSumError):
    code = 115
    error = "gradient check failed"
    exit_code = 3


def format_validation_error(exc) -> ConfigError:
    """Turn a pydantic ValidationError into a ConfigError naming the first bad key path."""
    problems = []
    first_path = None
    for err in exc.errors():
        path = ".".join(str(part) for part in err.get("loc", ()))
        first_path = first_path or path
        problems.append({"key": path, "message": err.get("msg", "")})
    summary = "; ".join(f"{p['key']}: {p['message']}" for p in problems)
    return ConfigError(f"invalid configuration: {summary}", key_path=first_path, details={"errors": problems})
