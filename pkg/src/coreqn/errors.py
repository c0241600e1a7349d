"""Exception types shared across the package."""


class UnsupportedModelError(TypeError):
    """Raised when an operation needs structure the model does not have."""


class SamplerFailure(RuntimeError):
    """Raised when an MCMC chain cannot produce finite trajectories.

    Carries a ``diagnostics`` dict (step size, iteration, last state) so
    callers can log the failing configuration.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class OptimizationFailure(RuntimeError):
    """Raised when an iterative optimizer exhausts its iteration budget."""


class NumericFailure(RuntimeError):
    """Raised when a numeric quantity that must be finite is not."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` is the dotted field path."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
