"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message text: ConfigError and UsageError exit 1,
DataError exits 2, NumericFault exits 3.
"""


class MaestroError(Exception):
    """Base class for all package errors."""


class ContractViolation(MaestroError):
    """An argument or state broke a documented precondition."""


class NumericFault(MaestroError):
    """A computation produced non-finite or otherwise invalid numbers."""


class DataError(MaestroError):
    """A dataset, manifest, or binary file is malformed or inconsistent."""


class ConfigError(MaestroError):
    """A configuration file or override is invalid."""


class UsageError(MaestroError):
    """Command line arguments are invalid."""
