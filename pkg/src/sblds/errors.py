"""Exception hierarchy shared by every sblds module.

The CLI maps these onto process exit codes, so new failure modes should
subclass one of them rather than raising bare builtins.
"""


class SbldsError(Exception):
    """Base class for all package errors."""


class ValidationError(SbldsError, ValueError):
    """An object violates a declared invariant (NaN voxels, duplicate ids, ...)."""


class FormatError(ValidationError):
    """A file does not follow the expected on-disk layout."""


class DomainError(SbldsError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(ValidationError):
    """Incompatible architecture or run configuration."""


class GenerationError(SbldsError, RuntimeError):
    """Procedural phantom generation gave up after its retry budget."""


class TrainingError(SbldsError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class PersistenceError(SbldsError, OSError):
    """Reading or writing a file failed."""

    def __init__(self, message: str, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
