"""Exception types shared across the package.

ValidationError and ConfigError indicate bad user input (CLI exit 1);
anything else escaping to the CLI is reported as a runtime failure (exit 2).
"""


class MuviecastError(Exception):
    pass


class ValidationError(MuviecastError, ValueError):
    """Invalid data: bad camera matrices, mismatched shapes, missing views."""


class LoadError(MuviecastError, IOError):
    """Missing or unreadable scene/weights files."""


class ConfigError(MuviecastError, ValueError):
    """Invalid configuration keys, values, or combinations."""
