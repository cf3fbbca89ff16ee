"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Missing, malformed, or non-finite input data."""


class NumericalError(Exception):
    """Optimization or evaluation produced non-finite values."""
