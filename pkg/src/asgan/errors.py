"""Exception hierarchy shared by all asgan modules."""


class AsganError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AsganError):
    """Operands have incompatible dimensions."""


class ContractError(AsganError):
    """A call violated an operation's contract (bad argument, empty input, ...)."""


class ConfigError(AsganError):
    """A configuration value is invalid or unknown."""


class DataError(AsganError):
    """Data content is unusable (unscaled, degenerate channel, empty, ...)."""


class ParseError(DataError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(AsganError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a checkpoint or is structurally broken (bad magic, truncation)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointShapeError(CheckpointError):
    """Stored weights disagree with the dimensions recorded in the header."""
