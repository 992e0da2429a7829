"""
Exception hierarchy shared by the numerical services and the CLI.
"""
from typing import Any, Optional


class QFractalError(Exception):
    """Base class for every error raised by the engine."""


class DomainError(QFractalError, ValueError):
    """Invalid physical parameters, positions outside the box or malformed ladders."""


class TruncationRangeError(QFractalError, ValueError):
    """Truncation N outside the stored terms, or a mode index that would overflow."""

    def __init__(self, message: str, advisory_max: Optional[int] = None):
        super().__init__(message)
        self.advisory_max = advisory_max

    def __reduce__(self):
        return (type(self), (str(self), self.advisory_max))


class NodeSingularityError(QFractalError, ArithmeticError):
    """The guidance field was requested where |Psi|^2 is below the node threshold."""

    def __init__(self, t: float, x: float, density: float):
        super().__init__(
            f"density {density:.3e} below node threshold at t={t!r}, x={x!r}"
        )
        self.t = t
        self.x = x
        self.density = density

    def __reduce__(self):
        return (type(self), (self.t, self.x, self.density))


class IntegrationStalledError(QFractalError, RuntimeError):
    """Step size fell below dt_min; carries the partial trajectory."""

    def __init__(self, t: float, x: float, N: int, partial: Any = None):
        super().__init__(f"integration stalled at t={t!r}, x={x!r} (N={N})")
        self.t = t
        self.x = x
        self.N = N
        self.partial = partial

    def __reduce__(self):
        return (type(self), (self.t, self.x, self.N, self.partial))


class FitError(QFractalError, ValueError):
    """Not enough points or modes for a regression."""


class ConfigError(QFractalError, ValueError):
    """Invalid run configuration or coefficient file."""
