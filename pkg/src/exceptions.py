"""
Exception hierarchy for the safe-set quantification tool.

Library code raises these; the CLI maps them onto exit codes.
"""


class SafeSetError(Exception):
    """Base class for all tool errors."""


class ConfigError(SafeSetError, ValueError):
    """Configuration is missing, malformed, or violates the schema."""


class PreconditionError(SafeSetError, ValueError):
    """An operation was called with arguments outside its contract."""


class GridExhaustedError(SafeSetError):
    """The covering grid has no active cells left."""


class BufferUnderflowError(SafeSetError, IndexError):
    """Pop was called on an empty replay buffer."""


class GridMismatchError(SafeSetError, ValueError):
    """A stored grid does not match the bounds or delta of the current configuration."""
