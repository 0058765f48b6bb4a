"""Exception types raised across the package."""


class DncbError(Exception):
    """Base class for package errors."""


class DomainError(DncbError, ValueError):
    """An argument lies outside the domain of a function."""


class ConvergenceError(DncbError, ArithmeticError):
    """A series, continued fraction or truncation did not converge within its cap."""


class MethodUnavailableError(DncbError, ValueError):
    """A sampler's validity condition fails for the requested parameters."""


class UnderflowError(DncbError, ArithmeticError):
    """A predictive density evaluated to zero at working precision."""


class CheckpointError(DncbError):
    """Base class for checkpoint problems."""


class CorruptCheckpointError(CheckpointError):
    """Checksum or structural validation of a checkpoint failed."""


class IncompatibleCheckpointError(CheckpointError):
    """A checkpoint was written by an incompatible format version."""
