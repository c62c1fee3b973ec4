class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Malformed, missing or inconsistent dataset input."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""
