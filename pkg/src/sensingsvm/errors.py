"""Exception types shared across the package."""


class UsageError(ValueError):
    """The caller violated an interface contract (bad arguments or shapes)."""


class DataError(ValueError):
    """Input data is structurally readable but semantically unusable."""


class ConfigError(UsageError):
    """A configuration file or bundled resource is missing or malformed."""
