"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """Input violates a documented precondition (non-finite, wrong shape, bad units...)."""


class DegenerateAxisError(InvalidParameterError):
    """A quantization axis was requested where none is defined (|B.g| = 0)."""


class UndefinedObjectiveError(RuntimeError):
    """The fit objective cannot be evaluated (e.g. zero assigned peaks)."""


class NonConvergenceError(RuntimeError):
    """An iterative stage failed to reach its convergence criterion."""
