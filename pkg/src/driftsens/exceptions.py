"""Exception types raised across the package."""


class DriftSensError(Exception):
    """Base class for all package errors."""


class DomainError(DriftSensError, ValueError):
    """A point or configuration is incompatible with the state-space domain."""


class ExplosionError(DriftSensError, ArithmeticError):
    """A simulated path left the explosion guard or became non-finite."""

    def __init__(self, step, path_index, value=None):
        self.step = step
        self.path_index = path_index
        self.value = value
        super().__init__(
            f"path {path_index} exploded at step {step} (|X| = {value!r})"
        )


class IllConditionedDiffusionError(DriftSensError, ArithmeticError):
    """sigma sigma^T is too ill-conditioned to invert reliably."""


class WeightOverflowError(DriftSensError, OverflowError):
    """exp(M - <M>/2) overflowed."""


class EstimationError(DriftSensError, RuntimeError):
    """A Monte Carlo estimate could not be formed."""


class InadmissibleObservableError(DriftSensError, ValueError):
    """An observable exceeded its declared sup bound."""


class InconclusiveFitError(DriftSensError, RuntimeError):
    """Too few usable points for the remainder decay fit."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


class ResolutionError(DriftSensError, ValueError):
    """A requested feature is narrower than the grid resolution."""


class DegenerateEigenvalueError(DriftSensError, ValueError):
    """A perturbation formula was requested for a non-simple eigenvalue."""


class ConvergenceError(DriftSensError, RuntimeError):
    """An iterative or dense solver failed its residual check."""


class ConfigError(DriftSensError, ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class DegenerateEigenvalueWarning(UserWarning):
    """Computed eigenvalue gap is below the simplicity threshold."""
