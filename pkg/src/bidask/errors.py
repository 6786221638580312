"""Exception types shared across the package."""


class NumericalFailure(RuntimeError):
    """A numerical routine failed to converge.

    Carries a ``diagnostics`` dict (residuals, iteration counts, grid shape)
    so callers can report what went wrong instead of a bare message.
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class SingularControlError(ValueError):
    """A scenario has zero volatility where a nonzero risk premium must be
    divided by it."""


class DomainExitError(RuntimeError):
    """A path left the spatial domain a price surface is defined on."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class ConsistencyError(RuntimeError):
    """An internal invariant failed after a construction finished.

    Raised instead of silently returning an object that violates its own
    contract (e.g. a shadow path outside its guaranteed ratio band).
    """


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))
