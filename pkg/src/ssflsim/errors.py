"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value or an operation precondition violated by config."""


class IdxFormatError(ValueError):
    """Malformed IDX file; the message names the byte offset of the problem."""
