"""Exception hierarchy shared by the simulator modules."""


class AFLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AFLError, ValueError):
    pass


class DataError(AFLError, ValueError):
    pass


class PartitionError(DataError):
    """A partition plan cannot be satisfied.

    ``worker`` holds the id of the first worker whose demand could not be met.
    """

    def __init__(self, message, worker=None):
        super().__init__(message)
        self.worker = worker


class FormatError(DataError):
    """Malformed IDX file."""


class DivergenceError(AFLError, FloatingPointError):
    """A non-finite value appeared during local training."""

    def __init__(self, message, step=None, worker=None):
        super().__init__(message)
        self.step = step
        self.worker = worker


class BoundedDelayError(AFLError):
    pass


class WarmStartError(AFLError):
    """AFA-CS aggregation was attempted before every memory slot was filled."""

    def __init__(self, message, worker=None):
        super().__init__(message)
        self.worker = worker


class StaleOverwriteWarning(UserWarning):
    """An update older than the stored memory slot was rejected."""
