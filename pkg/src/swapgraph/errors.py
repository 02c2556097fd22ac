"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, or inconsistent settings."""
