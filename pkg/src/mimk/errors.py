"""Exception types shared across the package."""


class MimkError(Exception):
    """Base class for all errors raised by mimk."""


class ShapeError(MimkError):
    """Operands have incompatible shapes; the message names both."""


class ContractError(MimkError):
    """A documented precondition was violated."""


class DataError(MimkError):
    """An input file could not be read or has an unsupported format."""


class CheckpointError(MimkError):
    """A checkpoint file is corrupt, truncated, or inconsistent."""


class TrainingError(MimkError):
    """Training aborted (non-finite loss or gradient)."""


class ConfigError(MimkError):
    """A run configuration is malformed or contains unknown keys."""
