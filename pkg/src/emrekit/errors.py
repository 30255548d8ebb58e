"""Exception hierarchy shared across emrekit."""


class EmreKitError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(EmreKitError, ValueError):
    pass


class CompletenessViolation(EmreKitError, ValueError):
    pass


class InvalidProbability(EmreKitError, ValueError):
    pass


class InvalidParameter(EmreKitError, ValueError):
    pass


class NonPauliNoise(EmreKitError, ValueError):
    pass


class NonInvertibleNoise(EmreKitError, ValueError):
    pass


class UnsupportedNoise(EmreKitError, ValueError):
    pass


class InfeasibleCertificate(EmreKitError):
    """A dual certificate violated one of its sampled constraints."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class InfeasibleBias(EmreKitError):
    """The bias budget admits no approximated gate.

    ``plan`` carries the fallback selection (no gate approximated, i.e. pure PEC)
    so callers that want the degenerate answer can still use it.
    """

    def __init__(self, message, plan=None):
        super().__init__(message)
        self.plan = plan


class ConfigError(EmreKitError):
    """Configuration problem, pointing at the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
