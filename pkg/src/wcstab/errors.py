"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class SolverError(RuntimeError):
    """An iterative solve failed to converge.

    ``history`` holds the max-norm residual recorded at each iteration.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)
