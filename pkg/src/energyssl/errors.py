"""Exception taxonomy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class ConfigError(ValueError):
    """Invalid configuration or incompatible shapes/settings."""

    exit_code = 1


class DataError(ValueError):
    """Malformed or inconsistent dataset contents."""

    exit_code = 2


class NumericError(ArithmeticError):
    """Non-finite value produced during computation."""

    exit_code = 3
