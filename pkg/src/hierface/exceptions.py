"""Exception types raised across the package."""


class HierfaceError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(HierfaceError, ValueError):
    pass


class NotPositiveDefinite(HierfaceError, ValueError):
    pass


class EmptyInput(HierfaceError, ValueError):
    pass


class DegenerateShape(HierfaceError, ValueError):
    pass


class TooFewSamples(HierfaceError, ValueError):
    pass


class IndexOutOfRange(HierfaceError, IndexError):
    pass


class ParseError(HierfaceError):
    """A file could not be read or decoded."""


class SchemaViolation(HierfaceError, ValueError):
    """A decoded record does not match the expected layout."""


class CardinalityMismatch(HierfaceError, ValueError):
    pass


class EmptyCluster(HierfaceError):
    pass


class TooManyNodes(HierfaceError, ValueError):
    pass


class MonotonicityViolation(HierfaceError, RuntimeError):
    """Parameter EM decreased the monitored score.

    The partial training trace is attached as ``trace`` so callers can dump it.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateStateWarning(UserWarning):
    """A hidden state received (almost) no responsibility during an M-step."""
