"""Exception hierarchy shared across the package."""


class DpsweepError(Exception):
    pass


class ConfigurationError(DpsweepError, ValueError):
    """Invalid parameters or configuration file contents."""


class DimensionError(DpsweepError, ValueError):
    pass


class NumericError(DpsweepError, ArithmeticError):
    pass


class TimestepError(DpsweepError, IndexError):
    pass


class UnsupportedProjectionError(DpsweepError):
    """Raised when A A^T is not invertible for the requested operator."""


class UnsupportedPriorError(DpsweepError):
    pass


class InsufficientDataError(DpsweepError, ValueError):
    pass


class DivergenceError(DpsweepError, RuntimeError):
    def __init__(self, t: int, message: str = ""):
        self.t = t
        super().__init__(message or f"non-finite iterate at timestep t={t}")
