"""Spring-block rate-and-state friction model: analysis toolkit."""

from .errors import (
    AccuracyError,
    DomainError,
    GuardTripped,
    IntegrationError,
    RangeError,
    SearchError,
    TraceError,
)
from .model import Params, PhysicalParams, nondimensionalize

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "DomainError",
    "GuardTripped",
    "IntegrationError",
    "RangeError",
    "SearchError",
    "TraceError",
    "Params",
    "PhysicalParams",
    "nondimensionalize",
    "__version__",
]
