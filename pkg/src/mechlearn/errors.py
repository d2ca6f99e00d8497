"""Semantic exception hierarchy.

Exit-code mapping used by the CLI: UsageError/ConfigError/DomainError -> 1,
CapacityError -> 2, InvariantError -> 3.
"""


class MechlearnError(Exception):
    """Base class for all package errors."""


class UsageError(MechlearnError):
    """Caller violated an operation's precondition or API contract."""


class DomainError(UsageError):
    """A numeric argument is outside its declared domain."""


class ConfigError(UsageError):
    """A configuration file or description is malformed or unsupported."""


class ParseError(ConfigError):
    """A serialized artifact failed validation at load time."""


class CapacityError(MechlearnError):
    """An enumeration or solver budget guard was exceeded."""


class InvariantError(MechlearnError):
    """An internal invariant that should never fail did fail."""
