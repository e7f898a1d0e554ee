class DepMicroDiffError(Exception):
    """Base class for package errors."""


class ConfigError(DepMicroDiffError, ValueError):
    pass


class DataError(DepMicroDiffError, ValueError):
    pass


class TrainingDivergence(DepMicroDiffError, RuntimeError):
    """Raised when a training loss becomes non-finite or explodes."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
