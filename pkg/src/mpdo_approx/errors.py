"""Exception hierarchy shared across the package."""


class MPDOError(Exception):
    """Base class for all package errors."""


class DomainError(MPDOError, ValueError):
    """An argument lies outside the domain of the operation."""


class ResourceError(MPDOError, MemoryError):
    """A configured size cap (dense dimension, purifying dimension) was exceeded."""


class ConsistencyError(MPDOError, RuntimeError):
    """Two objects that must describe the same state do not."""


class StructuralError(MPDOError, RuntimeError):
    """A projection region does not align with the block structure it is applied to."""


class InvariantViolation(MPDOError, AssertionError):
    """A certified bound or representation invariant failed at runtime."""
