"""Exception types shared across the package."""


class ConfigError(Exception):
    """Raised for invalid configuration or violated preconditions."""


class DegeneracyError(Exception):
    """Raised when a computation is numerically degenerate (zero response,
    empty mask, ill-defined direction and similar)."""
