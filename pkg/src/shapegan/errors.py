"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so raising the right class is
part of each function's contract: configuration and usage problems are
recoverable caller mistakes, numeric errors abort a run, data errors cover
file parsing and serialization.
"""


class ShapeGanError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ShapeGanError):
    """Invalid configuration value or incompatible tensor/network shapes."""


class UsageError(ShapeGanError):
    """An API or CLI contract was violated by the caller."""


class NumericError(ShapeGanError):
    """A computation produced NaN or Inf, or is otherwise numerically invalid."""


class DataError(ShapeGanError):
    """Malformed file content (images, manifests, checkpoints)."""


class TrainingAborted(NumericError):
    """Training stopped on a numeric error; carries the failing iteration."""

    def __init__(self, message: str, iteration: int, checkpoint_path=None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
