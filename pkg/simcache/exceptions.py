"""
Error vocabulary shared by every simcache module.

Bad input raises a ValueError subclass; failures talking to a backend raise
BackendError so callers can tell them apart from their own mistakes.
"""
from typing import Optional


class SimCacheError(Exception):
    """Base class for all simcache errors."""


class DimensionMismatchError(SimCacheError, ValueError):
    def __init__(self, expected: int, actual: int, what: str = "vector"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} has dimension {actual}, expected {expected}")


class InvalidVectorError(SimCacheError, ValueError):
    pass


class ConfigError(SimCacheError, ValueError):
    def __init__(self, message: str, fields: Optional[list] = None):
        self.fields = fields or []
        super().__init__(message)


class VectorFormatError(SimCacheError, ValueError):
    def __init__(self, path: str, offset: int, reason: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: {reason} at byte offset {offset}")


class UnknownIdError(SimCacheError, KeyError):
    def __init__(self, vector_id: int):
        self.vector_id = vector_id
        super().__init__(f"unknown vector id {vector_id}")

    def __str__(self):
        return self.args[0]


class SampleError(SimCacheError, ValueError):
    pass


class BackendError(SimCacheError, RuntimeError):
    pass
