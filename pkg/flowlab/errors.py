"""Exception hierarchy shared by the numerical core, the CLI and the dashboard."""


class FlowLabError(Exception):
    """Base class for every error raised by flowlab."""


class GridError(FlowLabError):
    pass


class GridMismatchError(FlowLabError):
    pass


class FieldShapeError(FlowLabError):
    pass


class DimensionError(FlowLabError):
    pass


class NonSPDError(FlowLabError):
    def __init__(self, what, index, min_eigenvalue):
        self.what = what
        self.index = tuple(int(i) for i in index)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"{what} is not positive-definite at grid point {self.index} "
            f"(smallest eigenvalue {self.min_eigenvalue:.3e})"
        )


class DomainExitError(FlowLabError):
    pass


class NotAFixedPointError(FlowLabError):
    def __init__(self, residual):
        self.residual = float(residual)
        super().__init__(f"base state is not stationary: sup|rhs| = {self.residual:.3e}")


class NumericalFailure(FlowLabError):
    """A run produced NaN/inf values or lost positive-definiteness."""

    def __init__(self, message, time=None, last_state=None):
        self.time = time
        self.last_state = last_state
        super().__init__(message if time is None else f"{message} (t = {time:.6g})")


class StepperError(FlowLabError):
    pass


class CurvatureModelError(FlowLabError):
    pass


class SamplingError(FlowLabError):
    pass


class ConfigError(FlowLabError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"[{key}] {message}")
