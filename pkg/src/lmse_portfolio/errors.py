"""Exception types raised by the solver and simulator."""


class DomainError(ValueError):
    """A time or wealth argument lies outside the model horizon."""


class ConfigError(ValueError):
    """Inconsistent or malformed configuration."""


class IllConditionedError(RuntimeError):
    """RBF Gram matrix is numerically singular."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class QPConvergenceError(RuntimeError):
    """Active-set iteration cap exceeded."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class BlowUpError(RuntimeError):
    """Explicit time step produced a non-finite value."""

    def __init__(self, message, step=None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class HashMismatchError(ValueError):
    """A checkpoint or statistics file was produced from a different configuration."""


class MissingSeriesError(ValueError):
    """A report input lacks a required column or file."""
