"""
Exceptions for artifact persistence. Each carries a stable integer code.
"""


class StoreError(Exception):
    """Base exception for reading or writing artifacts."""

    code = 1

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class BadMagicError(StoreError):
    code = 10


class VersionMismatchError(StoreError):
    code = 11


class TruncatedError(StoreError):
    code = 12

    def __init__(self, message: str, path: str = "", expected: int = 0, actual: int = 0):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{message} (expected {expected} bytes, got {actual})", path)


class DimensionMismatchError(StoreError):
    code = 13


class CorruptArtifactError(StoreError):
    code = 14
