"""Exception types shared across the package."""


class DomainError(ValueError):
    """A pointwise nonlinearity was evaluated outside its domain."""


class InvalidArgumentError(ValueError):
    pass


class InadmissibleMeshError(ValueError):
    """The mesh violates the orthogonality / positivity conditions of TPFA."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class MeshParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(ValueError):
    """Projected initial data violates the bounds 0 <= S <= 1, 0 <= M < 1."""


class StepFailure(RuntimeError):
    """A time step could not be completed (Newton failure or damping underflow)."""

    def __init__(self, message, step=None, t=None, dt=None, report=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.dt = dt
        self.report = report


class InvariantViolation(RuntimeError):
    def __init__(self, message, step=None, cell=None):
        super().__init__(message)
        self.step = step
        self.cell = cell
