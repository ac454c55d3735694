"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Invalid or unsatisfiable configuration."""


class CapabilityError(ValueError):
    """Request exceeds what an operation supports (e.g. too many points)."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed to meet its contract."""


class WindowError(DomainError):
    """A path or test function leaves the certified simulation window.

    ``leak`` carries the estimated escape probability when known.
    """

    def __init__(self, message, leak=None):
        super().__init__(message)
        self.leak = leak


class SnapshotError(ValueError):
    """Malformed environment snapshot."""
