"""
Observables built on the spectral wavefield: density and phase profiles, the quantum
potential, particle energies along trajectories, ensemble energy and density recurrences.
"""
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Sequence
import logging
import math

import numpy as np
from scipy import integrate, signal

from app.core.domain import TimePoint
from app.core.errors import DomainError
from app.services.dynamics_service import Trajectory
from app.services.spectral_service import (
    SpectralState,
    TimeLike,
    evaluate,
    evaluate_grid,
    derivative_stack,
    evaluate_points,
)
from app.workers.pool import process_map

logger = logging.getLogger(__name__)

RECURRENCE_EXACT = 1e-10
RECURRENCE_SCAN = 1e-3

# Offset (times L) of the neighbours that sign a point sentinel
SENTINEL_STEP = 1e-6


def quadrature_points(n_max: int) -> int:
    """Odd point count resolving mode n_max with at least 8 points per half-wavelength."""
    return max(1001, 8 * n_max + 1)


def reference_grid(state: SpectralState, N: Optional[int] = None) -> np.ndarray:
    return np.linspace(0.0, state.domain.L, quadrature_points(state.n_max(N)))


@dataclass(eq=False)
class FieldProfile:
    """Density, unwrapped phase and quantum potential on a grid at one time."""
    t: float
    N: int
    x: np.ndarray
    rho: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    Q_last_finite: np.ndarray
    masked: np.ndarray

    def mass(self) -> float:
        return float(integrate.simpson(self.rho, x=self.x))


@dataclass(eq=False)
class EnergyTrace:
    """K, Q, V and E = K + V + Q along one trajectory."""
    x0: float
    N: int
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    E: np.ndarray
    singular: np.ndarray
    Q_last_finite: np.ndarray


@dataclass(frozen=True)
class EnergyRow:
    count: int
    n_max: int
    spectral: float
    quadrature: Optional[float] = None


@dataclass(frozen=True)
class RecurrenceEntry:
    label: str
    t: float
    sup_diff: float
    recurs: bool


@dataclass(eq=False)
class RecurrenceReport:
    N: int
    entries: List[RecurrenceEntry]
    scan: List[RecurrenceEntry] = field(default_factory=list)

    @property
    def earliest_recurrence(self) -> Optional[RecurrenceEntry]:
        hits = [e for e in self.scan if e.sup_diff <= RECURRENCE_SCAN]
        return hits[0] if hits else None


@dataclass(frozen=True)
class PeakMatch:
    k_index: int
    q_index: Optional[int]
    offset: Optional[int]


@dataclass(frozen=True)
class KineticPeak:
    """
    A local maximum of K along a trajectory with the quantum force around it.

    power_before and power_after are dK/dt = -v dQ/dx at the neighbouring samples.
    """
    index: int
    t: float
    x: float
    K: float
    power_before: float
    power_at: float
    power_after: float
    dQ: float
    d2Q: float

    @property
    def stationary(self) -> bool:
        """dK/dt changes sign within one output step of the peak."""
        powers = (self.power_before, self.power_at, self.power_after)
        return min(powers) <= 0.0 <= max(powers)

    @property
    def in_potential_well(self) -> bool:
        return self.d2Q > 0.0


# ========== Quantum potential ==========

def _potential_from_ratios(state: SpectralState, psi, dpsi, d2psi, valid) -> np.ndarray:
    """Q = -(hbar^2 / 2m) [Re(Psi''/Psi) + Im(Psi'/Psi)^2] where valid, NaN elsewhere."""
    d = state.domain
    safe = np.where(valid, psi, 1.0)
    r1 = dpsi / safe
    r2 = d2psi / safe
    q = -(d.hbar ** 2) / (2.0 * d.m) * (np.real(r2) + np.imag(r1) ** 2)
    return np.where(valid, q, np.nan)


def _with_sentinels(q: np.ndarray, singular: np.ndarray):
    """Replace singular entries by +-inf signed like the last finite value to their left."""
    out = q.copy()
    last = np.full(q.shape, np.nan)
    previous = np.nan
    for i in range(q.size):
        if singular[i]:
            last[i] = previous
            sign = -1.0 if math.isnan(previous) else math.copysign(1.0, previous)
            out[i] = sign * math.inf
        else:
            previous = q[i]
            last[i] = q[i]
    return out, last


def quantum_potential(state: SpectralState, t: TimeLike, x: float, N: Optional[int] = None) -> float:
    """
    Quantum potential at one point from analytic derivatives.

    At or below the node threshold the result is an infinity signed like Q just to the
    left of x (SENTINEL_STEP * L away), or just to the right when the left side is a wall
    or singular too; -inf when both sides are.
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    d = state.domain
    eps = state.node_threshold(N)
    sample = evaluate(state, t, x, N)
    if abs(sample.psi) ** 2 > eps:
        q = _potential_from_ratios(
            state, np.array([sample.psi]), np.array([sample.dpsi]), np.array([sample.d2psi]),
            np.array([True]),
        )
        return float(q[0])

    step = SENTINEL_STEP * d.L
    neighbours = [y for y in (x - step, x + step) if 0.0 < y < d.L]
    for y in neighbours:
        side = evaluate(state, t, y, N)
        if abs(side.psi) ** 2 > eps:
            q = _potential_from_ratios(
                state, np.array([side.psi]), np.array([side.dpsi]), np.array([side.d2psi]),
                np.array([True]),
            )
            return math.copysign(math.inf, float(q[0]))
    return -math.inf


def quantum_potential_derivatives(state: SpectralState, t, x, N: Optional[int] = None):
    """
    Q and its first two spatial derivatives at paired (t_i, x_i) points.

    With r_p = Psi^(p) / Psi, Q = -(hbar^2 / 2m) [Re r2 + (Im r1)^2] and the derivatives
    follow from r_p' = r_{p+1} - r_1 r_p, so only analytic derivatives of Psi up to the
    fourth order are summed. Entries at or below the node threshold are NaN.

    Returns:
        (Q, dQ/dx, d2Q/dx2) arrays
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if t.size == 1 and x.size > 1:
        t = np.full(x.size, t[0])
    d = state.domain
    stack = derivative_stack(state, t, x, N, order=4)
    psi = stack[0]
    valid = np.abs(psi) ** 2 > state.node_threshold(N)
    safe = np.where(valid, psi, 1.0)
    r1, r2, r3, r4 = (stack[p] / safe for p in range(1, 5))

    r1_x = r2 - r1 * r1
    r2_x = r3 - r1 * r2
    r3_x = r4 - r1 * r3
    r1_xx = r2_x - 2.0 * r1 * r1_x
    r2_xx = r3_x - r1_x * r2 - r1 * r2_x

    c = -(d.hbar ** 2) / (2.0 * d.m)
    Q = c * (r2.real + r1.imag ** 2)
    dQ = c * (r2_x.real + 2.0 * r1.imag * r1_x.imag)
    d2Q = c * (r2_xx.real + 2.0 * r1_x.imag ** 2 + 2.0 * r1.imag * r1_xx.imag)
    nan = np.nan
    return np.where(valid, Q, nan), np.where(valid, dQ, nan), np.where(valid, d2Q, nan)


def quantum_potential_grid(state: SpectralState, t: TimeLike, x_grid, N: Optional[int] = None):
    """Q on a grid with signed sentinels; returns (Q, Q_last_finite, singular)."""
    N = state.n_terms if N is None else state.check_truncation(N)
    batch = evaluate_grid(state, t, x_grid, N, order=2)
    singular = batch.density <= state.node_threshold(N)
    q = _potential_from_ratios(state, batch.psi, batch.dpsi, batch.d2psi, ~singular)
    q, last = _with_sentinels(q, singular)
    return q, last, singular


# ========== Profiles ==========

def _unwrapped_phase(psi: np.ndarray, masked: np.ndarray, hbar: float) -> np.ndarray:
    """hbar * arg(Psi) unwrapped left to right, restarting after every masked gap."""
    S = np.full(psi.shape, np.nan)
    edges = np.flatnonzero(np.diff(np.concatenate(([1], masked.astype(np.int8), [1]))))
    for start, stop in zip(edges[::2], edges[1::2]):
        S[start:stop] = hbar * np.unwrap(np.angle(psi[start:stop]))
    return S


def density_phase(
    state: SpectralState,
    t: TimeLike,
    x_grid,
    N: Optional[int] = None,
    threads: int = 1
) -> FieldProfile:
    """
    Density, phase and quantum potential on a grid.

    S is left undefined (NaN) where rho falls below the node threshold; Q carries
    signed infinities there.

    Args:
        state: Spectral state
        t: Time (float or TimePoint)
        x_grid: Ascending positions in [0, L], walls included or not
        N: Truncation (defaults to all terms)
        threads: Worker threads for the grid kernel

    Returns:
        FieldProfile
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    batch = evaluate_grid(state, t, x_grid, N, order=2, threads=threads)
    rho = batch.density
    masked = rho <= state.node_threshold(N)

    S = _unwrapped_phase(batch.psi, masked, state.domain.hbar)
    q = _potential_from_ratios(state, batch.psi, batch.dpsi, batch.d2psi, ~masked)
    Q, last = _with_sentinels(q, masked)
    return FieldProfile(
        t=float(t), N=N, x=batch.x, rho=rho, S=S, Q=Q, Q_last_finite=last, masked=masked
    )


def probability_current(state: SpectralState, t: TimeLike, x_grid, N: Optional[int] = None) -> np.ndarray:
    """j = (hbar/m) Im(conj(Psi) dPsi/dx)."""
    d = state.domain
    batch = evaluate_grid(state, t, x_grid, N, order=1)
    return d.hbar / d.m * np.imag(np.conj(batch.psi) * batch.dpsi)


def continuity_residual(
    state: SpectralState,
    t: float,
    x: float,
    N: Optional[int] = None,
    h_x: float = 1e-3,
    h_t: float = 1e-3
) -> float:
    """
    Central finite-difference value of d(rho)/dt + d(rho v)/dx at (t, x).

    Step sizes are fractions of L and T. The exact value is zero, so the result is the
    discretisation error, which falls as h^2.
    """
    d = state.domain
    dx = h_x * d.L
    dt = h_t * d.period
    if not (0.0 < x - dx and x + dx < d.L):
        raise DomainError(f"stencil around x={x} leaves the box")

    rho_plus = evaluate_grid(state, t + dt, [x], N, order=0).density[0]
    rho_minus = evaluate_grid(state, t - dt, [x], N, order=0).density[0]
    flux = probability_current(state, t, [x - dx, x + dx], N)
    return float((rho_plus - rho_minus) / (2.0 * dt) + (flux[1] - flux[0]) / (2.0 * dx))


# ========== Energies ==========

def energy_along(trajectory: Trajectory, state: SpectralState) -> EnergyTrace:
    """
    Kinetic, quantum and total energy at every trajectory sample.

    K = m v^2 / 2 from the sampled velocity; V = 0 inside the box; E = K + V + Q.
    Samples at or below the node threshold carry signed infinite Q and E.
    """
    d = state.domain
    N = trajectory.N
    batch = evaluate_points(state, trajectory.t, trajectory.x, N, order=2)
    singular = (batch.density <= state.node_threshold(N)) | ~np.isfinite(trajectory.v)

    K = 0.5 * d.m * np.where(singular, 0.0, trajectory.v) ** 2
    q = _potential_from_ratios(state, batch.psi, batch.dpsi, batch.d2psi, ~singular)
    Q, last = _with_sentinels(q, singular)
    V = np.zeros_like(K)
    return EnergyTrace(
        x0=trajectory.x0,
        N=N,
        t=trajectory.t,
        x=trajectory.x,
        v=trajectory.v,
        K=K,
        Q=Q,
        V=V,
        E=K + V + Q,
        singular=singular,
        Q_last_finite=last,
    )


def ensemble_energy(
    state: SpectralState,
    t: TimeLike = 0.0,
    N: Optional[int] = None,
    normalize: bool = False
) -> float:
    """
    Spectral ensemble energy sum_{n<=N} |c_n|^2 E_n.

    Time independent; t is accepted for symmetry with the quadrature form. With
    normalize=False the truncated series is not renormalized.
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    weights = np.abs(state.coefficients[:N]) ** 2
    value = float(np.sum(weights * state.energies[:N]))
    if normalize:
        value /= float(np.sum(weights))
    return value


def ensemble_energy_quadrature(
    state: SpectralState,
    t: TimeLike = 0.0,
    N: Optional[int] = None,
    threads: int = 1
) -> float:
    """Simpson quadrature of (hbar^2 / 2m) |dPsi/dx|^2 (plus the offset times the mass)."""
    N = state.n_terms if N is None else state.check_truncation(N)
    d = state.domain
    x = reference_grid(state, N)
    batch = evaluate_grid(state, t, x, N, order=1, threads=threads)
    kinetic = integrate.simpson(d.hbar ** 2 / (2.0 * d.m) * np.abs(batch.dpsi) ** 2, x=x)
    value = float(kinetic)
    if state.energy_offset:
        value += state.energy_offset * float(integrate.simpson(batch.density, x=x))
    return value


def ensemble_energy_table(
    state: SpectralState,
    counts: Sequence[int],
    quadrature: bool = True,
    threads: int = 1
) -> List[EnergyRow]:
    """Ensemble energy against the number of retained terms."""
    rows = []
    for count in counts:
        N = state.check_truncation(count)
        rows.append(EnergyRow(
            count=N,
            n_max=state.n_max(N),
            spectral=ensemble_energy(state, 0.0, N),
            quadrature=ensemble_energy_quadrature(state, 0.0, N, threads) if quadrature else None,
        ))
        logger.debug(f"Ensemble energy at N={N}: {rows[-1].spectral!r}")
    return rows


def energy_sign_changes(trace: EnergyTrace) -> int:
    """Number of sign changes of the finite, non-zero part of E along the trace."""
    E = trace.E[np.isfinite(trace.E) & (trace.E != 0.0)]
    return int(np.count_nonzero(np.diff(np.sign(E))))


def kinetic_peaks(trace: EnergyTrace, state: SpectralState) -> List[KineticPeak]:
    """
    Local maxima of K with the quantum force at and next to each of them.

    Along a path m dv/dt = -dQ/dx, so dK/dt = -v dQ/dx: a kinetic peak sits where the
    path crosses a spatial critical point of Q. Peaks touching a singular sample are
    skipped.
    """
    K = np.where(trace.singular, 0.0, trace.K)
    indices, _ = signal.find_peaks(K)
    indices = [int(i) for i in indices if not np.any(trace.singular[i - 1:i + 2])]
    if not indices:
        return []

    around = np.array([[i - 1, i, i + 1] for i in indices]).ravel()
    _, dQ, d2Q = quantum_potential_derivatives(state, trace.t[around], trace.x[around], trace.N)
    power = (-trace.v[around] * dQ).reshape(-1, 3)
    dQ = dQ.reshape(-1, 3)
    d2Q = d2Q.reshape(-1, 3)

    peaks = [
        KineticPeak(
            index=i,
            t=float(trace.t[i]),
            x=float(trace.x[i]),
            K=float(trace.K[i]),
            power_before=float(power[row, 0]),
            power_at=float(power[row, 1]),
            power_after=float(power[row, 2]),
            dQ=float(dQ[row, 1]),
            d2Q=float(d2Q[row, 1]),
        )
        for row, i in enumerate(indices)
    ]
    logger.debug(f"{len(peaks)} kinetic peaks along x0={trace.x0!r}")
    return peaks


def match_kinetic_peaks(trace: EnergyTrace, max_offset: int = 1) -> List[PeakMatch]:
    """
    Pair every local maximum of K with the nearest local minimum of Q along the path.

    Singular Q samples count as minima. `offset` is the distance in output steps, and
    matches farther than max_offset report q_index = None. Q also changes in time at
    the particle (dE/dt = dQ/dt), so the along-path minima drift off the kinetic peaks;
    kinetic_peaks checks the spatial force instead.
    """
    K = np.where(np.isfinite(trace.K), trace.K, 0.0)
    finite_q = trace.Q[np.isfinite(trace.Q)]
    floor = (finite_q.min() - 1.0) if finite_q.size else -1.0
    Q = np.where(np.isfinite(trace.Q), trace.Q, floor)

    k_peaks, _ = signal.find_peaks(K)
    q_minima, _ = signal.find_peaks(-Q)

    matches = []
    for i in k_peaks:
        if q_minima.size == 0:
            matches.append(PeakMatch(k_index=int(i), q_index=None, offset=None))
            continue
        nearest = int(q_minima[np.argmin(np.abs(q_minima - i))])
        offset = abs(nearest - int(i))
        if offset <= max_offset:
            matches.append(PeakMatch(k_index=int(i), q_index=nearest, offset=offset))
        else:
            matches.append(PeakMatch(k_index=int(i), q_index=None, offset=offset))
    return matches


# ========== Recurrences ==========

def recurrence_check(
    state: SpectralState,
    N: Optional[int] = None,
    times: Sequence[TimeLike] = (),
    scan_divisions: int = 64,
    threads: int = 1
) -> RecurrenceReport:
    """
    Compare rho_t with rho_0 on the reference grid.

    Every requested time gets sup_x |rho_t - rho_0|, and times at or below 1e-10 are
    marked as recurrences. The scan over t = j T / scan_divisions, j = 1..divisions-1,
    uses exact rational phases; for odd-mode states none of them should come within 1e-3.
    """
    N = state.n_terms if N is None else state.check_truncation(N)
    x = reference_grid(state, N)
    rho_0 = evaluate_grid(state, TimePoint.of_period(state.domain, 0), x, N, order=0, threads=threads).density

    def entry(time: TimeLike, threshold: float) -> RecurrenceEntry:
        rho_t = evaluate_grid(state, time, x, N, order=0, threads=threads).density
        sup = float(np.max(np.abs(rho_t - rho_0)))
        label = time.label() if isinstance(time, TimePoint) else repr(float(time))
        return RecurrenceEntry(label=label, t=float(time), sup_diff=sup, recurs=sup <= threshold)

    entries = [entry(time, RECURRENCE_EXACT) for time in times]
    scan = [
        entry(TimePoint.of_period(state.domain, j, scan_divisions), RECURRENCE_SCAN)
        for j in range(1, scan_divisions)
    ]
    report = RecurrenceReport(N=N, entries=entries, scan=scan)
    if report.earliest_recurrence is not None:
        logger.info(f"Early recurrence at {report.earliest_recurrence.label}")
    return report


def mass_fraction(profile: FieldProfile, lo: float, hi: float) -> float:
    """Share of the profile's mass inside [lo, hi]."""
    inside = (profile.x >= lo) & (profile.x <= hi)
    rho = np.where(inside, profile.rho, 0.0)
    return float(integrate.simpson(rho, x=profile.x)) / profile.mass()


# ========== Carpets ==========

@dataclass(eq=False)
class CarpetGrid:
    """Density over (x, t), one row per time."""
    x: np.ndarray
    t: np.ndarray
    rho: np.ndarray
    labels: List[str]


def _density_row(state: SpectralState, x: np.ndarray, N: int, time: TimeLike) -> np.ndarray:
    return evaluate_grid(state, time, x, N, order=0).density


def density_carpet(
    state: SpectralState,
    times: Sequence[TimeLike],
    x_grid,
    N: Optional[int] = None,
    threads: int = 1
) -> CarpetGrid:
    """Density rows at every requested time, computed in worker processes when threads > 1."""
    N = state.n_terms if N is None else state.check_truncation(N)
    x = np.asarray(x_grid, dtype=float)
    state.domain.check_position(x)
    rows = process_map(partial(_density_row, state, x, N), list(times), threads)
    labels = [tp.label() if isinstance(tp, TimePoint) else repr(float(tp)) for tp in times]
    logger.info(f"Carpet of {len(rows)} rows x {x.size} points at N={N}")
    return CarpetGrid(
        x=x,
        t=np.array([float(tp) for tp in times]),
        rho=np.vstack(rows) if rows else np.empty((0, x.size)),
        labels=labels,
    )
