"""Matrix product density operator approximations of mixed states on chains,
with certified trace-norm error bounds driven by purification entanglement."""

from .errors import (
    ConsistencyError,
    DomainError,
    InvariantViolation,
    MPDOError,
    ResourceError,
    StructuralError,
)
from .operators import Cut, DenseOperator, SiteChain, trace_norm, two_norm, operator_norm

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError", "Cut", "DenseOperator", "DomainError", "InvariantViolation", "MPDOError",
    "ResourceError", "SiteChain", "StructuralError", "operator_norm", "trace_norm", "two_norm",
]
