"""Exception hierarchy shared by all cfoed modules."""

from __future__ import annotations


class CfoedError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CfoedError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ContractError(CfoedError, ValueError):
    """Array shapes or sizes do not conform."""


class AssemblyError(CfoedError):
    """The reduced operator K(eps) is singular, indefinite or non-symmetric."""


class SolverError(CfoedError):
    """A linear solve failed."""


class DesignDegeneracyError(SolverError):
    """The saddle matrix is singular for the requested measurement design."""


class DegenerateEigenvalueError(CfoedError):
    """The smallest eigenvalue is (numerically) repeated, so its gradient is undefined."""

    def __init__(self, message: str, gap: float = 0.0):
        super().__init__(message)
        self.gap = gap


class OptimizationError(CfoedError):
    """An iterative optimizer failed to converge.

    ``trace`` holds whatever iteration history was collected before giving up.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ConfigError(CfoedError, ValueError):
    """A run configuration is invalid."""


class SeparationError(DomainError):
    """Two measurement positions are closer than the design's minimum separation."""
