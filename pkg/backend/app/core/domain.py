"""
Physical parameters of the infinite square well and its eigenbasis.

Units default to L = m = hbar = 1. Every type here is immutable.
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Union
import math

import numpy as np

from app.core.errors import DomainError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class BoxDomain:
    """Box length, particle mass and reduced Planck constant."""
    L: float = 1.0
    m: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("L", "m", "hbar"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def period(self) -> float:
        """Density period T = m L^2 / (2 pi hbar)."""
        return self.m * self.L ** 2 / (2.0 * math.pi * self.hbar)

    @property
    def ground_energy(self) -> float:
        return mode_energy(self, 1)

    def momentum(self, n: ArrayLike) -> ArrayLike:
        return np.asarray(n) * math.pi * self.hbar / self.L

    def wavenumber(self, n: ArrayLike) -> ArrayLike:
        return np.asarray(n) * math.pi / self.L

    def check_position(self, x: ArrayLike) -> None:
        x_arr = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x_arr)):
            raise DomainError("positions must be finite")
        if np.any(x_arr < 0.0) or np.any(x_arr > self.L):
            raise DomainError(f"positions must lie in [0, {self.L}]")


@dataclass(frozen=True)
class Mode:
    """Box eigenstate n with momentum p_n = n pi hbar / L and energy p_n^2 / 2m."""
    n: int
    p: float
    E: float

    @classmethod
    def of(cls, domain: BoxDomain, n: int) -> "Mode":
        _check_quantum_number(n)
        return cls(n=n, p=n * math.pi * domain.hbar / domain.L, E=mode_energy(domain, n))


@dataclass(frozen=True)
class TimePoint:
    """
    An instant, optionally pinned to an exact rational fraction of the period.

    When `fraction` is set, phases are reduced exactly (see spectral_service.phase_factors)
    and `t` is the float image of fraction * T.
    """
    t: float
    fraction: Optional[Fraction] = None

    @classmethod
    def absolute(cls, t: float) -> "TimePoint":
        return cls(t=float(t))

    @classmethod
    def of_period(cls, domain: BoxDomain, p: Union[int, Fraction], q: int = 1) -> "TimePoint":
        fraction = Fraction(p) / q
        return cls(t=float(fraction) * domain.period, fraction=fraction)

    @classmethod
    def irrational_sqrt2(cls, domain: BoxDomain) -> "TimePoint":
        return cls(t=domain.period / math.sqrt(2.0))

    @classmethod
    def parse(cls, domain: BoxDomain, value: Union[str, float, int]) -> "TimePoint":
        """
        Parse a time specification.

        Accepted forms: a number (absolute time), "rational p/q" (exact fraction of T),
        "irrational sqrt2" (T/sqrt(2)) and "period x" (float multiple of T).
        """
        if isinstance(value, (int, float)):
            if value == 0:
                return cls.of_period(domain, 0)
            return cls.absolute(value)

        text = value.strip().lower()
        kind, _, arg = text.partition(" ")
        arg = arg.strip()
        try:
            if kind == "rational":
                return cls.of_period(domain, Fraction(arg))
            if kind == "irrational":
                if arg != "sqrt2":
                    raise DomainError(f"unknown irrational time {arg!r}; only 'sqrt2' is defined")
                return cls.irrational_sqrt2(domain)
            if kind == "period":
                return cls.absolute(float(arg) * domain.period)
            return cls.absolute(float(text))
        except (ValueError, ZeroDivisionError) as e:
            if isinstance(e, DomainError):
                raise
            raise DomainError(f"cannot parse time specification {value!r}: {e}") from e

    def __float__(self) -> float:
        return self.t

    def label(self) -> str:
        if self.fraction is not None:
            return f"{self.fraction.numerator}/{self.fraction.denominator} T"
        return repr(self.t)


def _check_quantum_number(n) -> None:
    n_arr = np.asarray(n)
    if not np.issubdtype(n_arr.dtype, np.integer) or np.any(n_arr < 1):
        raise DomainError(f"quantum numbers must be integers >= 1, got {n!r}")


def eigenfunction(domain: BoxDomain, n: int, x: ArrayLike) -> ArrayLike:
    """
    Orthonormal box eigenfunction sqrt(2/L) sin(n pi x / L).

    Vanishes exactly at both walls.
    """
    _check_quantum_number(n)
    domain.check_position(x)
    x_arr = np.asarray(x, dtype=float)
    values = math.sqrt(2.0 / domain.L) * np.sin(n * math.pi * x_arr / domain.L)
    values = np.where((x_arr == 0.0) | (x_arr == domain.L), 0.0, values)
    return float(values) if values.ndim == 0 else values


def mode_energy(domain: BoxDomain, n: ArrayLike) -> ArrayLike:
    """E_n = n^2 pi^2 hbar^2 / (2 m L^2)."""
    _check_quantum_number(n)
    n_arr = np.asarray(n, dtype=float)
    energies = n_arr ** 2 * math.pi ** 2 * domain.hbar ** 2 / (2.0 * domain.m * domain.L ** 2)
    return float(energies) if energies.ndim == 0 else energies


def period(domain: BoxDomain) -> float:
    """Fundamental density period T = m L^2 / (2 pi hbar) = 2 pi hbar / (E_3 - E_1)."""
    return domain.period


def recurrence_phase(domain: BoxDomain, k: int) -> float:
    """(E_n(k) - E_1) T / hbar with n(k) = 2(k - 1) + 3; equals k (k + 1) pi."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    n = 2 * (k - 1) + 3
    return (mode_energy(domain, n) - mode_energy(domain, 1)) * domain.period / domain.hbar


def time_grid(domain: BoxDomain, start: TimePoint, end: TimePoint, count: int) -> List[TimePoint]:
    """
    `count` evenly spaced instants from start to end inclusive.

    Stays on exact fractions of T when both ends are exact.
    """
    if count < 2:
        raise DomainError(f"a time grid needs at least 2 points, got {count}")
    if start.fraction is not None and end.fraction is not None:
        step = (end.fraction - start.fraction) / (count - 1)
        return [TimePoint.of_period(domain, start.fraction + j * step) for j in range(count)]
    return [TimePoint.absolute(t) for t in np.linspace(float(start), float(end), count)]
