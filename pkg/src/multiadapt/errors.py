"""Exception types raised by the solver."""


class ConfigurationError(ValueError):
    """Invalid problem, method or solver parameters."""


class InterpolationError(LookupError):
    """No element covering the requested time could be resolved."""


class DegenerateStepError(RuntimeError):
    """Time steps collapsed (recursion depth cap or halving limit hit)."""


class SingularSlabError(RuntimeError):
    """Newton's method met a singular time slab Jacobian."""


class IntegrationFailure(RuntimeError):
    """A time slab could not be accepted after repeated rejection."""


class TraceError(ValueError):
    """A solution trace is incomplete or malformed."""
