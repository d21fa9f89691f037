"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see ``transduct.cli``):
input/config/parse problems exit 2, numerical failures exit 3, and
exceeded enumeration or search budgets exit 4.
"""


class TransductError(Exception):
    """Base class for all package-specific errors."""


class InputError(TransductError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class ConfigError(InputError):
    """A run configuration is malformed or references missing resources."""


class ParseError(InputError):
    """A data file could not be parsed; message names the offending line."""


class NumericError(TransductError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to factorize."""


class BudgetError(TransductError, RuntimeError):
    """An enumeration or search exceeded its configured hard cap."""


class DataError(TransductError, RuntimeError):
    """Required data (labels, record versions) is missing or incompatible."""
