"""
Spectral states of the particle in a box.

Every wavefunction is a finite list of (mode index, complex coefficient) pairs over the
orthonormal eigenbasis sqrt(2/L) sin(n pi x / L). Values and spatial derivatives are
exact termwise sums; nothing here finite-differences. The density of a state is also
available as a cosine series, which gives the cumulative probability in closed form.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Sequence, Union
import logging
import math

import numpy as np
from scipy import fft

from app.core.config import settings
from app.core.domain import BoxDomain, TimePoint, mode_energy
from app.core.errors import ConfigError, DomainError, TruncationRangeError
from app.workers.pool import thread_map

logger = logging.getLogger(__name__)

# n^2 must stay exact in int64 for the rational phase reduction
MAX_MODE_INDEX = 2 ** 31 - 1

# Relative size below which a uniform-state bracket counts as an exact zero
ZERO_BRACKET = 1e-12

TimeLike = Union[float, TimePoint]


class StateKind(str, Enum):
    """Provenance tag of a spectral state."""
    UNIFORM = "uniform"
    WEIERSTRASS = "weierstrass"
    TRIANGLE = "triangle"
    PARABOLA = "parabola"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Immutable list of box modes and coefficients."""
    domain: BoxDomain
    modes: np.ndarray
    coefficients: np.ndarray
    label: StateKind = StateKind.CUSTOM
    energy_offset: float = 0.0
    global_phase: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        modes = np.array(self.modes, dtype=np.int64)
        coefficients = np.array(self.coefficients, dtype=np.complex128)
        if modes.ndim != 1 or modes.shape != coefficients.shape:
            raise DomainError("modes and coefficients must be 1-D arrays of equal length")
        if modes.size == 0:
            raise DomainError("a spectral state needs at least one term")
        if modes[0] < 1 or np.any(np.diff(modes) <= 0):
            raise DomainError("mode indices must be >= 1 and strictly increasing")
        if modes[-1] > MAX_MODE_INDEX:
            raise TruncationRangeError(f"mode index {modes[-1]} exceeds {MAX_MODE_INDEX}")
        if not np.all(np.isfinite(coefficients)):
            raise DomainError("coefficients must be finite")
        modes.setflags(write=False)
        coefficients.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "label", StateKind(self.label))

    @property
    def n_terms(self) -> int:
        return int(self.modes.size)

    @property
    def energies(self) -> np.ndarray:
        """Mode energies including the constant offset."""
        return mode_energy(self.domain, self.modes) + self.energy_offset

    def check_truncation(self, N: int) -> int:
        if not isinstance(N, (int, np.integer)) or isinstance(N, bool):
            raise TruncationRangeError(f"truncation must be an integer, got {N!r}")
        if N < 1 or N > self.n_terms:
            raise TruncationRangeError(
                f"truncation N={N} outside 1..{self.n_terms}", advisory_max=self.n_terms
            )
        return int(N)

    def norm(self, N: Optional[int] = None) -> float:
        """Sum of |c_n|^2 over the first N terms, without renormalizing."""
        N = self.n_terms if N is None else self.check_truncation(N)
        return float(np.sum(np.abs(self.coefficients[:N]) ** 2))

    def n_max(self, N: Optional[int] = None) -> int:
        """Largest mode index among the first N terms."""
        N = self.n_terms if N is None else self.check_truncation(N)
        return int(self.modes[N - 1])

    def truncated(self, N: int) -> "SpectralState":
        N = self.check_truncation(N)
        return SpectralState(
            domain=self.domain,
            modes=self.modes[:N],
            coefficients=self.coefficients[:N],
            label=self.label,
            energy_offset=self.energy_offset,
            global_phase=self.global_phase,
            params=dict(self.params),
        )

    def with_global_phase(self, theta: float) -> "SpectralState":
        """Same state times e^{i theta}; the coefficients themselves are left untouched."""
        return SpectralState(
            domain=self.domain,
            modes=self.modes,
            coefficients=self.coefficients,
            label=self.label,
            energy_offset=self.energy_offset,
            global_phase=self.global_phase + theta,
            params=dict(self.params),
        )

    def with_energy_offset(self, offset: float) -> "SpectralState":
        return SpectralState(
            domain=self.domain,
            modes=self.modes,
            coefficients=self.coefficients,
            label=self.label,
            energy_offset=self.energy_offset + offset,
            global_phase=self.global_phase,
            params=dict(self.params),
        )

    @property
    def gauged_coefficients(self) -> np.ndarray:
        """Coefficients with the global phase applied."""
        if not self.global_phase:
            return self.coefficients
        return self.coefficients * np.exp(1j * self.global_phase)

    def node_threshold(self, N: Optional[int] = None) -> float:
        """epsilon_node = 1e-12 * (sum_{n<=N} |c_n|^2) * (2 / L)."""
        return 1e-12 * self.norm(N) * 2.0 / self.domain.L


@dataclass(frozen=True)
class WavefieldSample:
    """Psi and its first two spatial derivatives at one point."""
    psi: complex
    dpsi: complex
    d2psi: complex


@dataclass(frozen=True, eq=False)
class WavefieldBatch:
    """Wavefield values on a set of points; indexable like a list of WavefieldSample."""
    x: np.ndarray
    psi: np.ndarray
    dpsi: Optional[np.ndarray] = None
    d2psi: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.x.size)

    def __getitem__(self, i: int) -> WavefieldSample:
        return WavefieldSample(
            psi=complex(self.psi[i]),
            dpsi=complex(self.dpsi[i]) if self.dpsi is not None else complex("nan"),
            d2psi=complex(self.d2psi[i]) if self.d2psi is not None else complex("nan"),
        )

    def __iter__(self) -> Iterator[WavefieldSample]:
        return (self[i] for i in range(len(self)))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


# ========== Construction ==========

def _normalized(coefficients: np.ndarray) -> np.ndarray:
    return coefficients / math.sqrt(float(np.sum(np.abs(coefficients) ** 2)))


def _check_n_max(n_max: int) -> None:
    if not isinstance(n_max, (int, np.integer)) or n_max < 1:
        raise DomainError(f"n_max must be an integer >= 1, got {n_max!r}")
    if n_max > MAX_MODE_INDEX:
        raise TruncationRangeError(f"n_max={n_max} exceeds {MAX_MODE_INDEX}")


def build_uniform(
    domain: BoxDomain,
    x1: float,
    x2: float,
    n_max: int,
    normalize: bool = False
) -> SpectralState:
    """
    Expand a wavefunction uniform on (x1, x2) and zero elsewhere.

    Coefficients are (2 / (pi sqrt(l))) sqrt(L/2) (1/n) [cos(p_n x1/hbar) - cos(p_n x2/hbar)]
    in the orthonormal basis, l = x2 - x1. For the full box only odd n survive and
    |c_n|^2 = 8 / (pi^2 n^2). Vanishing terms are not stored.

    Args:
        domain: Box parameters
        x1: Left edge of the support
        x2: Right edge of the support
        n_max: Largest mode index considered
        normalize: Rescale so the stored terms sum to one

    Returns:
        SpectralState labelled "uniform"
    """
    _check_n_max(n_max)
    if not (0.0 <= x1 < x2 <= domain.L):
        raise DomainError(f"need 0 <= x1 < x2 <= L, got x1={x1}, x2={x2}, L={domain.L}")

    n = np.arange(1, n_max + 1, dtype=np.int64)
    k = n * math.pi / domain.L
    # Walls are handled with exact values so the full box keeps only odd modes.
    left = np.ones(n.size) if x1 == 0.0 else np.cos(k * x1)
    right = np.where(n % 2 == 0, 1.0, -1.0) if x2 == domain.L else np.cos(k * x2)
    bracket = left - right

    width = x2 - x1
    prefactor = 2.0 / (math.pi * math.sqrt(width)) * math.sqrt(domain.L / 2.0)
    keep = np.abs(bracket) > ZERO_BRACKET
    coefficients = prefactor * bracket[keep] / n[keep]

    if normalize:
        coefficients = _normalized(coefficients)

    logger.debug(f"uniform state on ({x1}, {x2}): {int(keep.sum())} of {n_max} modes kept")
    return SpectralState(
        domain=domain,
        modes=n[keep],
        coefficients=coefficients.astype(np.complex128),
        label=StateKind.UNIFORM,
        params={"x1": x1, "x2": x2, "n_max": int(n_max), "normalize": normalize},
    )


def max_weierstrass_order(n: int) -> int:
    """Largest R with n^R <= MAX_MODE_INDEX."""
    R = 0
    while n ** (R + 1) <= MAX_MODE_INDEX:
        R += 1
    return R


def build_weierstrass(
    domain: BoxDomain,
    s: float,
    n: int,
    R: int,
    normalize: bool = True
) -> SpectralState:
    """
    Weierstrass-type lacunary state: modes n^r for r = 0..R with weights n^{r(s-2)}.

    Args:
        domain: Box parameters
        s: Exponent, 0 < s < 2
        n: Base quantum number, n >= 2
        R: Highest power
        normalize: Apply the constant A_R so that sum |c|^2 = 1

    Returns:
        SpectralState labelled "weierstrass"
    """
    if not (0.0 < s < 2.0):
        raise DomainError(f"s must satisfy 0 < s < 2, got {s}")
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n!r}")
    if not isinstance(R, (int, np.integer)) or R < 0:
        raise DomainError(f"R must be an integer >= 0, got {R!r}")
    if int(n) ** int(R) > MAX_MODE_INDEX:
        advisory = max_weierstrass_order(int(n))
        raise TruncationRangeError(
            f"n^R = {n}^{R} overflows the mode range; use R <= {advisory}",
            advisory_max=advisory,
        )

    r = np.arange(R + 1, dtype=np.int64)
    modes = np.array([int(n) ** int(ri) for ri in r], dtype=np.int64)
    weights = np.power(float(n), r * (s - 2.0))
    if normalize:
        weights = _normalized(weights)

    return SpectralState(
        domain=domain,
        modes=modes,
        coefficients=weights.astype(np.complex128),
        label=StateKind.WEIERSTRASS,
        params={"s": s, "n": int(n), "R": int(R), "normalize": normalize},
    )


def build_triangle(domain: BoxDomain, n_max: int) -> SpectralState:
    """
    Unit-normalized triangle peaked at L/2 and zero at both walls.

    c_n = (4 sqrt(6) / (pi^2 n^2)) (-1)^((n-1)/2) for odd n, zero for even n.
    """
    _check_n_max(n_max)
    n = np.arange(1, n_max + 1, 2, dtype=np.int64)
    sign = np.where((n // 2) % 2 == 0, 1.0, -1.0)
    coefficients = 4.0 * math.sqrt(6.0) / (math.pi ** 2 * n.astype(float) ** 2) * sign
    return SpectralState(
        domain=domain,
        modes=n,
        coefficients=coefficients.astype(np.complex128),
        label=StateKind.TRIANGLE,
        params={"n_max": int(n_max)},
    )


def build_parabola(domain: BoxDomain, n_max: int) -> SpectralState:
    """
    Unit-normalized parabola sqrt(30 / L^5) x (L - x).

    c_n = 8 sqrt(15) / (pi^3 n^3) for odd n, zero for even n.
    """
    _check_n_max(n_max)
    n = np.arange(1, n_max + 1, 2, dtype=np.int64)
    coefficients = 8.0 * math.sqrt(15.0) / (math.pi ** 3 * n.astype(float) ** 3)
    return SpectralState(
        domain=domain,
        modes=n,
        coefficients=coefficients.astype(np.complex128),
        label=StateKind.PARABOLA,
        params={"n_max": int(n_max)},
    )


def build_custom(
    domain: BoxDomain,
    modes: Sequence[int],
    coefficients: Sequence[complex],
    normalize: bool = False
) -> SpectralState:
    coefficients = np.asarray(coefficients, dtype=np.complex128)
    if normalize:
        coefficients = _normalized(coefficients)
    return SpectralState(
        domain=domain,
        modes=np.asarray(modes, dtype=np.int64),
        coefficients=coefficients,
        label=StateKind.CUSTOM,
        params={"normalize": normalize},
    )


def read_coefficients(path: Union[str, Path], domain: BoxDomain, normalize: bool = False) -> SpectralState:
    """
    Read a coefficient file of lines `n real(c_n) imag(c_n)`.

    Blank lines and anything after '#' are ignored; n must be strictly increasing.
    """
    modes = []
    coefficients = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read coefficient file {path}: {e}") from e

    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ConfigError(f"{path}:{lineno}: expected 'n re im', got {raw!r}")
        try:
            n = int(fields[0])
            c = complex(float(fields[1]), float(fields[2]))
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
        if n < 1:
            raise ConfigError(f"{path}:{lineno}: mode index must be >= 1, got {n}")
        if modes and n <= modes[-1]:
            raise ConfigError(f"{path}:{lineno}: mode {n} does not increase after {modes[-1]}")
        modes.append(n)
        coefficients.append(c)

    if not modes:
        raise ConfigError(f"{path}: no coefficients found")
    return build_custom(domain, modes, coefficients, normalize=normalize)


def write_coefficients(path: Union[str, Path], state: SpectralState) -> None:
    fmt = settings.CSV_FLOAT_FORMAT
    d = state.domain
    lines = [
        f"# label={state.label.value} terms={state.n_terms} L={d.L!r} m={d.m!r} hbar={d.hbar!r}",
        "# n re(c_n) im(c_n)",
    ]
    for n, c in zip(state.modes, state.gauged_coefficients):
        lines.append(f"{int(n)} {fmt % c.real} {fmt % c.imag}")
    Path(path).write_text("\n".join(lines) + "\n")


# ========== Evaluation ==========

def gauge_factor(state: SpectralState, time: TimeLike) -> complex:
    """e^{i (theta - offset t / hbar)}, the factor shared by every term."""
    if not (state.global_phase or state.energy_offset):
        return 1.0 + 0.0j
    angle = state.global_phase - state.energy_offset * float(time) / state.domain.hbar
    return complex(np.exp(1j * angle))


def phase_factors(state: SpectralState, time: TimeLike, N: Optional[int] = None) -> np.ndarray:
    """
    e^{-i E_n t / hbar} for the first N terms, global phase included.

    A TimePoint with an exact fraction p/q of the period is reduced exactly: E_n T / hbar
    equals n^2 pi / 4 in every box, so the phase is pi ((n^2 p) mod 8q) / (4q).
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    modes = state.modes[:N]

    if isinstance(time, TimePoint) and time.fraction is not None:
        p = time.fraction.numerator
        q = time.fraction.denominator
        modulus = 8 * q
        residue = ((modes % modulus) ** 2 % modulus) * (p % modulus) % modulus
        phases = np.exp(-1j * math.pi * residue.astype(float) / (4.0 * q))
    else:
        t = float(time)
        base = mode_energy(state.domain, modes)
        phases = np.exp(-1j * base * t / state.domain.hbar)

    gauge = gauge_factor(state, time)
    return phases if gauge == 1.0 else phases * gauge


def phase_matrix(state: SpectralState, t: np.ndarray, N: int, gauge: bool = True) -> np.ndarray:
    """
    Phase factors at many float times, one row per time.

    With gauge=False the global phase and the energy offset are left out; the
    guidance field and the density do not depend on them.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    d = state.domain
    energies = mode_energy(d, state.modes[:N])
    phases = np.exp(-1j * np.multiply.outer(t, energies) / d.hbar)
    if gauge and (state.global_phase or state.energy_offset):
        angle = state.global_phase - state.energy_offset * t / d.hbar
        phases *= np.exp(1j * angle)[:, None]
    return phases


def _termwise_sums(
    state: SpectralState,
    weights: np.ndarray,
    x: np.ndarray,
    N: int,
    order: int
):
    """Sum the first N terms at the points x; weights are (N,) or (len(x), N)."""
    k = state.domain.wavenumber(state.modes[:N])
    arg = np.multiply.outer(x, k)
    terms = np.sin(arg) * weights
    psi = terms.sum(axis=1)
    dpsi = d2psi = None
    if order >= 1:
        dpsi = (np.cos(arg) * (weights * k)).sum(axis=1)
    if order >= 2:
        d2psi = (terms * (-k * k)).sum(axis=1)

    at_wall = (x == 0.0) | (x == state.domain.L)
    psi[at_wall] = 0.0
    return psi, dpsi, d2psi


def _rows_per_chunk(N: int) -> int:
    return max(1, settings.GRID_CHUNK_ELEMENTS // max(N, 1))


def evaluate_grid(
    state: SpectralState,
    t: TimeLike,
    x_grid: Union[Sequence[float], np.ndarray],
    N: Optional[int] = None,
    order: int = 2,
    threads: int = 1
) -> WavefieldBatch:
    """
    Psi, dPsi/dx and d2Psi/dx2 on a grid at one time.

    Rows are evaluated in chunks, optionally on a thread pool; every row keeps the
    same ascending-mode pairwise summation, so results do not depend on the schedule.

    Args:
        state: Spectral state
        t: Time (float or TimePoint)
        x_grid: Ascending positions in [0, L]
        N: Number of leading terms (defaults to all)
        order: 0 for Psi only, 1 adds dPsi, 2 adds d2Psi
        threads: Worker threads for the row chunks

    Returns:
        WavefieldBatch over the grid
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    x = np.asarray(x_grid, dtype=float).reshape(-1)
    state.domain.check_position(x)

    amplitude = state.coefficients[:N] * math.sqrt(2.0 / state.domain.L)
    weights = amplitude * phase_factors(state, t, N)

    step = _rows_per_chunk(N)
    chunks = [x[i:i + step] for i in range(0, x.size, step)] or [x]
    results = thread_map(lambda xc: _termwise_sums(state, weights, xc, N, order), chunks, threads)

    psi = np.concatenate([r[0] for r in results])
    dpsi = np.concatenate([r[1] for r in results]) if order >= 1 else None
    d2psi = np.concatenate([r[2] for r in results]) if order >= 2 else None
    return WavefieldBatch(x=x, psi=psi, dpsi=dpsi, d2psi=d2psi)


def evaluate(state: SpectralState, t: TimeLike, x: float, N: Optional[int] = None) -> WavefieldSample:
    """Psi_t(x; N) and its first two derivatives at a single point."""
    return evaluate_grid(state, t, [x], N, order=2)[0]


def evaluate_points(
    state: SpectralState,
    t: np.ndarray,
    x: np.ndarray,
    N: int,
    order: int = 1
) -> WavefieldBatch:
    """
    Wavefield at paired (t_i, x_i) points, one time per point.

    Positions are not range-checked; the integrator screens stage points itself.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    amplitude = state.coefficients[:N] * math.sqrt(2.0 / state.domain.L)
    weights = phase_matrix(state, t, N) * amplitude
    psi, dpsi, d2psi = _termwise_sums(state, weights, x, N, order)
    return WavefieldBatch(x=x, psi=psi, dpsi=dpsi, d2psi=d2psi)


def derivative_stack(
    state: SpectralState,
    t: np.ndarray,
    x: np.ndarray,
    N: int,
    order: int = 4
) -> np.ndarray:
    """
    Spatial derivatives of Psi of orders 0..order at paired (t_i, x_i) points.

    Row p holds d^p Psi / dx^p, summed termwise from k^p sin(k x + p pi / 2).
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    amplitude = state.coefficients[:N] * math.sqrt(2.0 / state.domain.L)
    weights = phase_matrix(state, t, N) * amplitude
    k = state.domain.wavenumber(state.modes[:N])
    arg = np.multiply.outer(x, k)
    cycle = (np.sin(arg), np.cos(arg))

    stack = np.empty((order + 1, x.size), dtype=np.complex128)
    for p in range(order + 1):
        sign = -1.0 if p % 4 in (2, 3) else 1.0
        stack[p] = sign * (cycle[p % 2] * (weights * k ** p)).sum(axis=1)
    return stack


def schrodinger_residual(state: SpectralState, t: TimeLike, x: float, N: Optional[int] = None) -> float:
    """
    |H Psi - i hbar dPsi/dt| from termwise analytic derivatives.

    H Psi uses -hbar^2/2m d2Psi/dx2 (plus the constant offset); i hbar dPsi/dt is
    sum E_n c_n xi_n e^{-i E_n t / hbar}.
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    d = state.domain
    d.check_position(x)

    amplitude = state.coefficients[:N] * math.sqrt(2.0 / d.L)
    weights = amplitude * phase_factors(state, t, N)
    terms = np.sin(d.wavenumber(state.modes[:N]) * float(x)) * weights

    sample = evaluate(state, t, x, N)
    h_psi = -(d.hbar ** 2) / (2.0 * d.m) * sample.d2psi + state.energy_offset * sample.psi
    dt_psi = complex(np.sum(state.energies[:N] * terms))
    return abs(h_psi - dt_psi)


def residual_tolerance(state: SpectralState, N: Optional[int] = None) -> float:
    """1e-9 * sum |c_n| E_n, the bound the termwise residual must respect."""
    N = state.n_terms if N is None else state.check_truncation(N)
    return 1e-9 * float(np.sum(np.abs(state.coefficients[:N]) * np.abs(state.energies[:N])))


# ========== Density as a cosine series ==========

# Largest mode index for which the dense series is built
MAX_SERIES_MODE = 1 << 20


def density_cosine_coefficients(
    state: SpectralState,
    t: Union[TimeLike, Sequence[float], np.ndarray],
    N: Optional[int] = None
) -> np.ndarray:
    """
    Coefficients b_j of rho_t(x) = sum_{j=0}^{2 n_max} b_j cos(j pi x / L).

    With A_n = c_n sqrt(2/L) e^{-i E_n t / hbar} on the dense index 0..n_max,
    b_0 = R_0 / 2 and b_j = Re R_j - S_j / 2, where R_j = sum_n A_{n+j} conj(A_n) and
    S_j = sum_n A_n conj(A_{j-n}). Both sums are taken with one zero-padded FFT.

    Args:
        state: Spectral state
        t: One time (float or TimePoint) or a 1-D array of float times
        N: Truncation (defaults to all terms)

    Returns:
        Array of shape (times, 2 n_max + 1); one row for a scalar time
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    n_max = state.n_max(N)
    if n_max > MAX_SERIES_MODE:
        raise DomainError(f"dense density series supports n_max <= {MAX_SERIES_MODE}, got {n_max}")

    amplitude = state.coefficients[:N] * math.sqrt(2.0 / state.domain.L)
    if isinstance(t, TimePoint) or np.ndim(t) == 0:
        weights = (amplitude * phase_factors(state, t, N))[None, :]
    else:
        weights = phase_matrix(state, t, N, gauge=False) * amplitude

    A = np.zeros((weights.shape[0], n_max + 1), dtype=np.complex128)
    A[:, state.modes[:N]] = weights
    size = fft.next_fast_len(2 * n_max + 2)
    FA = fft.fft(A, size, axis=1)
    FC = fft.fft(np.conj(A), size, axis=1)
    R = fft.ifft(FA * np.conj(FA), axis=1)[:, :2 * n_max + 1].real
    S = fft.ifft(FA * FC, axis=1)[:, :2 * n_max + 1].real
    # Lags at or beyond n_max are zero; the circular correlation wraps negative lags there
    R[:, n_max:] = 0.0

    b = R - 0.5 * S
    b[:, 0] = 0.5 * R[:, 0]
    return b


def cumulative_series(b: np.ndarray, u: np.ndarray):
    """
    G(u) = b_0 u + sum_j b_j sin(j u) / j and its derivative sum_j b_j cos(j u).

    The cumulative probability is (L / pi) G(pi x / L). Row i of b is used with point u_i.
    """
    b = np.atleast_2d(b)
    u = np.asarray(u, dtype=float).reshape(-1)
    j = np.arange(1, b.shape[1], dtype=float)
    waves = np.exp(1j * np.multiply.outer(u, j))
    G = b[:, 0] * u + np.sum(waves.imag * (b[:, 1:] / j), axis=1)
    rho = b[:, 0] + np.sum(waves.real * b[:, 1:], axis=1)
    return G, rho


def cumulative_series_grid(b: np.ndarray, refine: int = 2):
    """
    G on the uniform grid u_k = pi k / (K + 1), k = 0..K+1, walls included.

    One type-I discrete sine transform per row; K + 1 = refine (J + 1) for J = 2 n_max.

    Returns:
        (u, G) with u of shape (K + 2,) and G of shape (rows, K + 2)
    """
    b = np.atleast_2d(b)
    rows, width = b.shape
    K = refine * width - 1
    y = np.zeros((rows, K))
    y[:, :width - 1] = b[:, 1:] / np.arange(1, width)
    inner = np.pi * np.arange(1, K + 1) / (K + 1)

    G = np.empty((rows, K + 2))
    G[:, 0] = 0.0
    G[:, 1:-1] = b[:, :1] * inner + 0.5 * fft.dst(y, type=1, axis=1)
    G[:, -1] = b[:, 0] * np.pi
    u = np.concatenate(([0.0], inner, [np.pi]))
    return u, G
