"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies.
"""


class TplabError(Exception):
    """Base class for package errors."""


class ConfigError(TplabError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class NumericError(TplabError):
    """A numerical routine failed to converge or produced non-finite values
    (exit code 3)."""


class AssumptionViolation(TplabError):
    """A model assumption required by an estimator does not hold for the
    given inputs, e.g. a path exhausted its step budget before hitting the
    product region (exit code 4)."""
