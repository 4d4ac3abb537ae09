"""Shared exception types.

The command line maps ValidationError/FormatError/DimensionError/ContractError
to exit code 1 and IntegrityError to exit code 2; anything else is a bug.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


class ValidationError(ValueError):
    """User-supplied configuration or input is invalid."""


class FormatError(ValueError):
    """An on-disk artifact is malformed; the message carries a byte offset."""


class IntegrityError(RuntimeError):
    """Stored or restored results are internally inconsistent."""
