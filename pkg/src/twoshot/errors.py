"""Exception hierarchy shared across the pipeline."""


class TwoshotError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(TwoshotError):
    """A tunable or config entry is outside its documented range."""


class ValidationError(TwoshotError):
    """Input data violates the documented file contract."""


class CalibrationError(TwoshotError):
    """Not enough or degenerate labeled data to fit a decision model."""


class PrerequisiteError(TwoshotError):
    """A pipeline stage was invoked before the stages it depends on."""

    def __init__(self, message: str, run_first: str | None = None):
        super().__init__(message)
        self.run_first = run_first
