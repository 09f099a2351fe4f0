"""Exception hierarchy shared by all modules."""


class BlowupError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(BlowupError, ValueError):
    pass


class InvalidIndexError(BlowupError, IndexError):
    pass


class InvalidArgumentError(BlowupError, ValueError):
    pass


class DataError(BlowupError, ValueError):
    """Non-finite or otherwise unusable sample data."""


class InternalConsistencyError(BlowupError, RuntimeError):
    pass


class DomainError(BlowupError, ValueError):
    """A field was evaluated outside the region where it is defined."""


class ConfigurationError(BlowupError, ValueError):
    """Invalid patch or run configuration.

    ``indices`` names the offending patches when the problem is geometric.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class ModeError(BlowupError, ValueError):
    """An identity was requested for a field whose mode does not satisfy its hypothesis."""


class SolverFailure(BlowupError, RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)
