"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4. Anything else is an internal bug.
"""


class StmaeError(Exception):
    """Base class for all package errors."""


class ConfigError(StmaeError):
    """Invalid or inconsistent run configuration."""


class DataError(StmaeError):
    """Bad input data: files, manifests, labels, shapes of user data."""


class ShapeError(DataError):
    """Tensor/array shape contract violated."""


class ClipFormatError(DataError):
    """Malformed clip file."""


class BadMagicError(ClipFormatError):
    """Clip file does not start with the expected magic bytes."""


class TruncatedClipError(ClipFormatError):
    """Clip file ends before the declared payload is complete."""


class VersionError(ClipFormatError):
    """Clip or checkpoint file carries an unsupported format version."""


class CheckpointError(DataError):
    """Malformed checkpoint file or config mismatch on load."""


class NumericError(StmaeError):
    """Numerical failure: non-finite values, undefined loss, rank deficiency."""
