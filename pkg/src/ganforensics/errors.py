"""Exception hierarchy.

Every exception carries a dotted ``category`` string (``io.*``, ``checkpoint.*``,
``config.*``, ``numeric.*``). The CLI prints the category verbatim, so these
strings are a stable interface for scripts.
"""


class ForensicsError(Exception):
    category = "error"

    def __init__(self, message, category=None):
        super().__init__(message)
        if category is not None:
            self.category = category


class ShapeError(ForensicsError, ValueError):
    category = "numeric.shape"


class NumericError(ForensicsError, ValueError):
    category = "numeric.value"


class ConfigError(ForensicsError, ValueError):
    category = "config.invalid"


class DataError(ForensicsError, ValueError):
    category = "io.data"


class DecodeError(DataError):
    category = "io.decode"


class ManifestError(DataError):
    category = "io.manifest"


class CheckpointError(ForensicsError):
    category = "checkpoint.invalid"


class CheckpointFormatError(CheckpointError):
    category = "checkpoint.magic"


class CheckpointVersionError(CheckpointError):
    category = "checkpoint.version"


class CheckpointTruncatedError(CheckpointError):
    category = "checkpoint.truncated"

    def __init__(self, expected, actual, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"truncated checkpoint{where}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class CheckpointDigestError(CheckpointError):
    category = "checkpoint.digest"
