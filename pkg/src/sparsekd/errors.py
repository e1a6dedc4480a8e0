"""Exception hierarchy shared across the package."""


class SparseKdError(Exception):
    """Base class for all package errors."""


class ContractError(SparseKdError):
    """A caller violated an operation's preconditions."""


class ShapeError(ContractError):
    """Operand shapes are incompatible. The message names both shapes."""


class ConfigError(SparseKdError):
    """A configuration value is missing, unknown, or out of range.

    ``path`` is the dotted field path (e.g. ``train.learning_rate``) when
    the error originates from a config file.
    """

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class InputError(SparseKdError):
    """Model input is invalid (e.g. token id out of vocabulary range)."""


class TrainingDivergedError(SparseKdError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message="loss is not finite"):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckpointError(SparseKdError):
    """A checkpoint file is corrupt or truncated."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""
