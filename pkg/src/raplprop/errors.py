"""Exception hierarchy shared by every raplprop module."""


class RaplError(Exception):
    """Base class for all raplprop errors."""


class OutOfRange(RaplError):
    """A power limit violates the domain's power-info ranges."""


class Unrepresentable(RaplError):
    """A value does not fit in its register field."""


class NonMonotonicTime(RaplError):
    pass


class NegativeUncore(RaplError):
    """Core energy exceeds package energy; the readings cover different intervals."""


class Infeasible(RaplError):
    """Requested calibration target cannot be reached."""


class DomainUnavailable(RaplError):
    pass


class PermissionDenied(RaplError):
    pass


class BackendFailure(RaplError):
    pass


class MissingEndpoints(RaplError):
    """A power curve lacks the 0% or 100% load point."""


class LevelNotSampled(RaplError):
    pass


class EmptyTrace(RaplError):
    pass


class TooLowBaseline(RaplError):
    """Average power too small to hold the full cap grid above zero."""


class SchemaError(RaplError):
    """Input document does not match its schema; ``field`` names the offending path."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
