class KerrLoopError(Exception):
    """Base class for every error raised by kerrloop"""


class InvalidDimensionError(KerrLoopError, ValueError):
    pass


class ParameterError(KerrLoopError, ValueError):
    pass


class ConfigError(KerrLoopError):
    pass


class NumericalError(KerrLoopError):
    """A computation ran but violated a numerical invariant"""


class StepSizeError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class NormalizationError(NumericalError):
    pass


class LiouvillianSizeError(NumericalError):
    pass
