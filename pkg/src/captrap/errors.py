"""Exception types shared across the toolkit.

Exit-code mapping for the CLI: ValidationError -> 1, IOFailure -> 2.
"""


class CaptrapError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CaptrapError):
    """Malformed input content, bad flags, or violated data invariants."""


class IOFailure(CaptrapError):
    """File-system level failure (missing file, unwritable path, ...)."""


class FormatError(ValidationError):
    """Malformed file content, annotated with where parsing stopped."""

    def __init__(self, path, message, offset=None):
        self.path = str(path)
        self.offset = offset
        at = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{self.path}: {message}{at}")
