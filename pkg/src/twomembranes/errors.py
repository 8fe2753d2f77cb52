"""Exception hierarchy shared by all modules."""


class TwoMembranesError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TwoMembranesError, ValueError):
    """Invalid parameters, domains, problems or run configurations."""


class UnsupportedDimensionError(ConfigurationError):
    pass


class StencilError(TwoMembranesError, IndexError):
    """A stencil point falls outside the discretized domain."""


class NonConvergenceError(TwoMembranesError):
    """An iteration hit its cap before reaching the requested tolerance.

    ``history`` holds the residual (or change) sequence observed so far.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class DivergenceError(TwoMembranesError):
    """A NaN or infinite value appeared during an iteration."""


class StageFailure(TwoMembranesError):
    """A continuation stage failed; ``eps`` identifies which one."""

    def __init__(self, eps, cause):
        super().__init__(f"penalized solve failed at eps={eps:.6g}: {cause}")
        self.eps = eps
        self.cause = cause
