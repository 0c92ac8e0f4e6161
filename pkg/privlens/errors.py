class PrivLensError(Exception):
    """Base class for every error raised by privlens"""
    exit_code = 1


class ConfigError(PrivLensError):
    exit_code = 2


class UnitsError(ConfigError):
    pass


class DatasetError(PrivLensError):
    exit_code = 3


class ShapeMismatchError(PrivLensError, ValueError):
    exit_code = 2

    def __init__(self, what: str, left, right):
        self.what = what
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(str(self))

    def __str__(self):
        return f"ShapeMismatchError: {self.what}: {self.left} != {self.right}"


class NumericalError(PrivLensError):
    exit_code = 4


class OptimizationDiverged(NumericalError):

    def __init__(self, iteration: int, trace, message: str = "objective is not finite"):
        self.iteration = iteration
        self.trace = trace
        self.message = message
        super().__init__(str(self))

    def __str__(self):
        return f"OptimizationDiverged: message='{self.message}', iteration={self.iteration}"


class AttackError(PrivLensError):

    def __init__(self, method: str, message: str):
        self.method = method
        self.message = message
        super().__init__(str(self))

    def __str__(self):
        return f"AttackError: method='{self.method}', message='{self.message}'"


def summarize_exception(exc):
    """
    Provides a text that represents the exception. To be used in report
    status columns and manifest counters, so produced text shouldn't be
    too diverse.

    >>> summarize_exception(AttackError("wiener", "lens has no PSF"))
    '/attack/wiener'
    >>> summarize_exception(KeyError("x"))
    '/rest/KeyError'
    """
    if isinstance(exc, AttackError):
        msg = f"/attack/{exc.method}"
    elif isinstance(exc, NumericalError):
        msg = f"/numerical/{exc.__class__.__name__}"
    elif isinstance(exc, DatasetError):
        msg = "/io/unreadable"
    else:
        msg = f"/rest/{exc.__class__.__name__}"
    return msg
