"""Exception types shared across the package."""


class PycraError(Exception):
    """Base class for all package errors."""


class ParameterError(PycraError, ValueError):
    """A parameter is outside its valid domain."""


class DimensionError(PycraError, ValueError):
    """Two traces or arrays have incompatible lengths."""


class NumericError(PycraError, ArithmeticError):
    """Non-finite input or numerically unstable configuration."""


class DegenerateFitError(PycraError):
    """Model identification has no information to work with."""


class CalibrationError(PycraError):
    """Too few samples to calibrate a threshold."""


class UndefinedRocError(PycraError):
    """ROC requested for data containing a single class."""


class NeedsMoreSamples(PycraError):
    """A window statistic was requested before enough samples arrived."""


class ConfigError(PycraError):
    """Scenario configuration failed validation.

    ``problems`` lists every violated field, one message per entry.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
