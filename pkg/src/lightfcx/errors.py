"""Exception hierarchy shared by all modules.

Contract violations (bad shapes, bad config, misuse of an API) raise
ContractError subclasses and map to CLI exit code 1. File and parsing
problems raise DataError and map to exit code 2.
"""


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes are incompatible; message names both shapes."""


class ConfigError(ContractError):
    """A configuration value is out of its documented range or inconsistent."""


class DataError(RuntimeError):
    """An input file is missing, malformed, or inconsistent."""
