"""
Exception hierarchy shared by the core and harness packages.
"""


class OptimizationError(Exception):
    """Base class for every error raised by this project."""


class InputError(OptimizationError, ValueError):
    """A precondition on an argument was violated (shape, range, duplicates)."""


class NumericalError(OptimizationError, ArithmeticError):
    """A covariance matrix could not be factorized even after jitter escalation."""


class ConfigError(OptimizationError):
    """An experiment configuration file is missing a field or holds an invalid value."""
