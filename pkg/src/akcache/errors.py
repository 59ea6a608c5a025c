"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters or inconsistent configuration."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed to converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({extra})"


class CacheInvariantError(AssertionError):
    """Internal cache state violated one of its invariants."""


class TraceFormatError(ValueError):
    """A trace file has too many malformed rows to be trusted."""
