"""Exception hierarchy shared across the package."""


class DlrrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DlrrError, ValueError):
    """Invalid or unknown configuration value."""


class DataError(DlrrError, ValueError):
    """Unreadable, malformed or inconsistent input data."""


class SvdError(DlrrError, ArithmeticError):
    """The SVD backend failed to converge."""

    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = attempts


class IllConditionedError(DlrrError, ArithmeticError):
    """A linear system was too ill-conditioned to solve to tolerance."""


class SolverError(DlrrError, ArithmeticError):
    """The low-rank solver diverged or failed for a class."""

    def __init__(self, message, class_id=None, iteration=None):
        super().__init__(message)
        self.class_id = class_id
        self.iteration = iteration


class DegenerateQueryError(DlrrError, ValueError):
    """Every class received a zero coefficient block for a query."""


class StageError(DlrrError):
    """Wraps a failure raised inside one stage of the training pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class DimensionError(DlrrError, ValueError):
    """A requested feature dimension exceeds the available variance directions."""
