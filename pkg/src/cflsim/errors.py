"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a configuration value or combination is rejected."""


class UnboundedObjectiveError(ValueError):
    """Raised when a quadratic has no finite minimizer (b outside range(A))."""
