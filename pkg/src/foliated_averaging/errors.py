"""Exception hierarchy shared by all modules."""


class FoliatedError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(FoliatedError, ValueError):
    pass


class DomainError(FoliatedError, ValueError):
    """A point lies outside the chart domain."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class FoliationViolation(FoliatedError):
    """A vector field that should be leaf-tangent has a transversal component."""

    def __init__(self, message, field_index, point, violation):
        super().__init__(message)
        self.field_index = field_index
        self.point = point
        self.violation = violation


class SchemeError(FoliatedError):
    pass


class HorizonError(FoliatedError):
    """A path is too short for the requested time window."""


class MeasureUnknown(FoliatedError):
    pass


class FitError(FoliatedError):
    pass


class EnvelopeError(FoliatedError):
    """The requested envelope form cannot dominate the measured estimates."""


class JacobianMissing(FoliatedError):
    pass


class ConfigError(FoliatedError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    """Aggregates every violation found in a configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))
