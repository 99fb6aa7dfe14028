"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched shapes.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class TruncationError(RuntimeError):
    """Norm left the truncated Fock space beyond the accepted tolerance."""

    def __init__(self, message, leaked):
        self.leaked = float(leaked)
        super().__init__(f"{message} (leaked norm {self.leaked:.3e})")


class DenseCapError(RuntimeError):
    """A dense representation would exceed the configured size cap."""


class BudgetError(RuntimeError):
    """A requested computation exceeds the resource budget."""


class InvariantViolation(AssertionError):
    """A numerical identity that must hold was violated."""
