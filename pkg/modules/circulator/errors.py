class CirculatorError(Exception):
    """Base class for every error raised by the circulator package."""


class ParameterError(CirculatorError, ValueError):
    """A physical parameter violates a formula's precondition."""


class FloquetError(CirculatorError):
    """The harmonic-balance system could not be solved."""


class TransientError(CirculatorError):
    """The time-domain integration failed or did not reach steady state."""


class TuneError(CirculatorError):
    """The tune-up procedure cannot reach the requested operating point."""


class ConfigError(CirculatorError):
    """The run configuration failed schema validation.

    ``details`` carries the rows of the validation report (section, field, issue, value).
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = list(details or [])
