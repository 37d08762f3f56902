"""Exception types raised across the package."""


class ZpdvrError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(ZpdvrError, ValueError):
    pass


class InvalidThresholdError(ZpdvrError, ValueError):
    pass


class InvalidStepError(ZpdvrError, ValueError):
    pass


class InvalidSmoothingError(ZpdvrError, ValueError):
    pass


class InvalidBatchError(ZpdvrError, ValueError):
    pass


class InvalidInputError(ZpdvrError, ValueError):
    pass


class ComponentIndexError(ZpdvrError, IndexError):
    pass


class GradientUnavailableError(ZpdvrError):
    """The problem has no analytic gradient (oracle-only paths)."""


class NotStronglyConvexError(ZpdvrError, ValueError):
    pass


class BudgetExhausted(ZpdvrError):
    """Signal: the next step would push the SZO count past the budget."""


class ParseError(ZpdvrError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ReferenceFailure(ZpdvrError):
    """The reference solver did not reach the requested tolerance."""


class ReferenceQualityError(ZpdvrError):
    """A run produced a residual far below the reference optimum."""


class ConfigError(ZpdvrError, ValueError):
    pass
