"""Exception types raised across the package."""


class CutiError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CutiError, ValueError):
    """An argument violates an operation's precondition."""


class FormatError(CutiError, ValueError):
    """A file does not follow the expected on-disk format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(CutiError, ValueError):
    """An experiment configuration failed validation."""


class TrainingDivergedError(CutiError, RuntimeError):
    """The training loss became non-finite."""


class ReportConsistencyError(CutiError, ValueError):
    """Stored aggregates disagree with the cells they were computed from."""
