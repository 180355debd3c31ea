"""Exception types shared across the package.

Each type maps to one CLI exit code so scripted callers can tell a bad
configuration apart from a numerical failure without parsing messages.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class NumericError(Exception):
    """Numerical failure such as a non-PSD covariance or NaN (CLI exit code 3)."""
