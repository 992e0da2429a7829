"""
Bohmian guidance: velocity field, adaptive trajectory integration and truncation-ladder limits.

Trajectories are advanced in lock-step batches. Every trajectory in a batch keeps its own
step size, so a trajectory integrated alone or next to others takes the same steps; the
batch only shares the vectorised field evaluation at each Runge-Kutta stage.

The transport map solves the same trajectories from the conserved cumulative probability
instead, one output time at a time; it is the only practical route at thousands of modes.
"""
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy import optimize

from app.core.config import settings
from app.core.domain import mode_energy
from app.core.errors import DomainError, IntegrationStalledError, NodeSingularityError
from app.schemas.run_config import IntegratorOptions
from app.services.spectral_service import (
    MAX_SERIES_MODE,
    SpectralState,
    TimeLike,
    cumulative_series,
    cumulative_series_grid,
    density_cosine_coefficients,
    evaluate_grid,
    phase_factors,
)
from app.workers.pool import process_map, thread_map

logger = logging.getLogger(__name__)

# Accepted positions closer than this (times L) to a wall are flagged and halve the next step
WALL_EPS = 1e-12

# Above this many terms the pairwise cumulative probability matrix gets too large
MAX_QUANTILE_TERMS = 2048

# Cumulative-probability roots: grid refinement, step tolerance in u = pi x / L, iteration cap
SERIES_REFINE = 2
ROOT_TOL = 1e-14
ROOT_MAX_ITER = 60


@dataclass(frozen=True)
class TrajectoryFlag:
    """A node or wall event met during integration."""
    t: float
    x: float
    kind: str


@dataclass(eq=False)
class Trajectory:
    """Samples (t, x, v) of one guided particle at truncation N."""
    x0: float
    N: int
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    flags: List[TrajectoryFlag] = field(default_factory=list)
    flags_dropped: int = 0
    stall: Optional[Tuple[float, float]] = None

    @property
    def samples(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.t.tolist(), self.x.tolist(), self.v.tolist()))

    @property
    def complete(self) -> bool:
        return self.stall is None

    def __len__(self) -> int:
        return int(self.t.size)


@dataclass(frozen=True)
class TruncationLadder:
    """Strictly increasing truncation sizes, at least three of them."""
    levels: Tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(n) for n in self.levels)
        if len(levels) < 3:
            raise DomainError(f"a truncation ladder needs at least 3 levels, got {len(levels)}")
        if levels[0] < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise DomainError(f"ladder levels must be >= 1 and strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def geometric(cls, first_exp: int = 4, last_exp: int = 13) -> "TruncationLadder":
        return cls(levels=tuple(2 ** k for k in range(first_exp, last_exp + 1)))

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)


@dataclass(eq=False)
class LimitTrajectory:
    """Per-level trajectories on a shared time grid and their sup-norm differences."""
    ladder: TruncationLadder
    per_level: List[Trajectory]
    deltas: List[float]
    converged: bool
    limit_tol: float

    @property
    def limit_estimate(self) -> Trajectory:
        return self.per_level[-1]


# ========== Velocity field ==========

def _resolve_truncation(state: SpectralState, N: Optional[int]) -> int:
    return state.n_terms if N is None else state.check_truncation(N)


def velocity(state: SpectralState, t: TimeLike, x: float, N: Optional[int] = None) -> float:
    """
    Guidance velocity (hbar/m) Im(Psi'/Psi) at a single point.

    Raises:
        DomainError: x not strictly inside the box
        NodeSingularityError: |Psi|^2 at or below the node threshold
    """
    N = _resolve_truncation(state, N)
    d = state.domain
    if not (0.0 < x < d.L):
        raise DomainError(f"velocity needs 0 < x < L, got x={x}")

    sample = evaluate_grid(state, t, [x], N, order=1)[0]
    density = abs(sample.psi) ** 2
    if density <= state.node_threshold(N):
        raise NodeSingularityError(float(t), float(x), density)
    return d.hbar / d.m * (sample.dpsi / sample.psi).imag


def velocity_grid(state: SpectralState, t: TimeLike, x_grid, N: Optional[int] = None) -> np.ndarray:
    """Velocity on a grid; NaN at walls and wherever |Psi|^2 is below the node threshold."""
    N = _resolve_truncation(state, N)
    d = state.domain
    batch = evaluate_grid(state, t, x_grid, N, order=1)
    valid = (batch.x > 0.0) & (batch.x < d.L) & (batch.density > state.node_threshold(N))
    safe = np.where(valid, batch.psi, 1.0)
    return np.where(valid, d.hbar / d.m * np.imag(batch.dpsi / safe), np.nan)


class _GuidanceKernel:
    """
    Guidance field of the first N terms at many (time, position) pairs.

    Phases leave out the global phase and the energy offset, which cancel in Psi'/Psi.
    Stage times inside one step are reached by powers of e^{-i omega h / 4}, and
    e^{i k x} is built as a running product over the wavenumber increments, so a stage
    costs one small exp and a cumulative product instead of a sine and cosine per term.
    """

    def __init__(self, state: SpectralState, N: int):
        d = state.domain
        modes = state.modes[:N]
        self.amplitude = state.coefficients[:N] * math.sqrt(2.0 / d.L)
        self.omega = mode_energy(d, modes) / d.hbar
        self.k = d.wavenumber(modes)
        increments = np.diff(self.k, prepend=0.0)
        self.increments, self.increment_index = np.unique(increments, return_inverse=True)
        self.eps = state.node_threshold(N)
        self.L = d.L
        self.scale = d.hbar / d.m

    def phases(self, t: np.ndarray) -> np.ndarray:
        """Weights c_n sqrt(2/L) e^{-i omega_n t}, one row per time."""
        t = np.asarray(t, dtype=float).reshape(-1)
        return np.exp(-1j * np.multiply.outer(t, self.omega)) * self.amplitude

    def stage_weights(self, t: np.ndarray, h: np.ndarray) -> List[np.ndarray]:
        """Weights at t, t + h/4, t + h/2, t + 3h/4 and t + h."""
        quarter = np.exp(-0.25j * np.multiply.outer(np.asarray(h, dtype=float), self.omega))
        weights = [self.phases(t)]
        for _ in range(4):
            weights.append(weights[-1] * quarter)
        return weights

    def field(self, weights: np.ndarray, x: np.ndarray):
        """Velocities with masks for node and wall violations; invalid entries hold 0."""
        x = np.asarray(x, dtype=float).reshape(-1)
        inside = (x > 0.0) & (x < self.L)
        xs = np.where(inside, x, 0.5 * self.L)
        steps = np.exp(1j * np.multiply.outer(xs, self.increments))
        waves = np.cumprod(steps[:, self.increment_index], axis=1)
        psi = np.sum(waves.imag * weights, axis=1)
        dpsi = np.sum(waves.real * (weights * self.k), axis=1)
        density = psi.real ** 2 + psi.imag ** 2
        node = inside & (density <= self.eps)
        valid = inside & ~node
        safe = np.where(valid, psi, 1.0)
        v = np.where(valid, self.scale * np.imag(dpsi / safe), 0.0)
        return v, node, ~inside


def _rk4_from(kernel: _GuidanceKernel, w_start, w_mid, w_end, x, h, k1):
    k2, n2, w2 = kernel.field(w_mid, x + 0.5 * h * k1)
    k3, n3, w3 = kernel.field(w_mid, x + 0.5 * h * k2)
    k4, n4, w4 = kernel.field(w_end, x + h * k3)
    x_new = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_new, n2 | n3 | n4, w2 | w3 | w4


def _doubling_step(kernel: _GuidanceKernel, t, x, h):
    """One full RK4 step and two half steps from (t, x); 11 field evaluations."""
    w = kernel.stage_weights(t, h)
    k1, node, wall = kernel.field(w[0], x)
    x_full, n_full, w_full = _rk4_from(kernel, w[0], w[2], w[4], x, h, k1)
    x_mid, n_a, w_a = _rk4_from(kernel, w[0], w[1], w[2], x, 0.5 * h, k1)
    k1_mid, n_mid, w_mid = kernel.field(w[2], x_mid)
    x_half, n_b, w_b = _rk4_from(kernel, w[2], w[3], w[4], x_mid, 0.5 * h, k1_mid)
    node = node | n_full | n_a | n_mid | n_b
    wall = wall | w_full | w_a | w_mid | w_b
    return x_full, x_half, node, wall


# ========== Integration ==========

def output_times(state: SpectralState, t_a: float, t_b: float, samples_per_period: int) -> np.ndarray:
    """Uniform output grid with at most T / samples_per_period spacing, ending exactly at t_b."""
    spacing = state.domain.period / samples_per_period
    intervals = max(1, math.ceil((t_b - t_a) / spacing - 1e-9))
    return np.linspace(t_a, t_b, intervals + 1)


def _check_span(t_span: Sequence[TimeLike]) -> Tuple[float, float]:
    t_a, t_b = float(t_span[0]), float(t_span[1])
    if not (math.isfinite(t_a) and math.isfinite(t_b) and t_a < t_b):
        raise DomainError(f"need a finite t_span with t_a < t_b, got ({t_a}, {t_b})")
    return t_a, t_b


def _check_starts(state: SpectralState, x0: np.ndarray) -> None:
    L = state.domain.L
    if x0.size == 0:
        raise DomainError("no initial positions given")
    if not np.all(np.isfinite(x0)) or np.any(x0 <= 0.0) or np.any(x0 >= L):
        raise DomainError(f"initial positions must lie strictly inside (0, {L})")


def _integrate_batch(
    state: SpectralState,
    x0: np.ndarray,
    times: np.ndarray,
    N: int,
    opts: IntegratorOptions
) -> List[Trajectory]:
    """Lock-step adaptive RK4 with step doubling over a batch of starting points."""
    d = state.domain
    M = x0.size
    kernel = _GuidanceKernel(state, N)
    tol = opts.tol_step
    dt_min = opts.resolved_dt_min(d)
    dt_max = times[-1] - times[0]
    wall_eps = WALL_EPS * d.L

    v0, node0, _ = kernel.field(kernel.phases(np.full(M, times[0])), x0)
    if np.any(node0):
        bad = x0[node0].tolist()
        raise DomainError(f"initial positions {bad} sit on a density node")

    out_x = np.full((M, times.size), np.nan)
    out_v = np.full((M, times.size), np.nan)
    out_x[:, 0] = x0
    out_v[:, 0] = v0

    t = np.full(M, times[0])
    x = x0.astype(float).copy()
    dt = np.full(M, min(opts.resolved_dt_init(d), dt_max))
    j = np.ones(M, dtype=np.int64)
    flags: List[List[TrajectoryFlag]] = [[] for _ in range(M)]
    dropped = np.zeros(M, dtype=np.int64)
    stall: List[Optional[Tuple[float, float]]] = [None] * M
    active = np.full(M, times.size > 1)

    def flag(i: int, ti: float, xi: float, kind: str) -> None:
        if len(flags[i]) < opts.max_flags:
            flags[i].append(TrajectoryFlag(t=float(ti), x=float(xi), kind=kind))
        else:
            dropped[i] += 1

    steps = 0
    while np.any(active):
        steps += 1
        idx = np.flatnonzero(active)
        if steps > opts.max_steps:
            logger.warning(f"max_steps={opts.max_steps} reached with {idx.size} trajectories unfinished")
            for i in idx:
                stall[i] = (float(t[i]), float(x[i]))
            active[idx] = False
            break

        ti, xi = t[idx], x[idx]
        target = times[j[idx]]
        remaining = target - ti
        landing = dt[idx] >= remaining
        h = np.where(landing, remaining, dt[idx])

        x_full, x_half, node, wall = _doubling_step(kernel, ti, xi, h)
        err = np.abs(x_half - x_full) / 15.0
        x_new = x_half + (x_half - x_full) / 15.0
        escaped = ~((x_new > 0.0) & (x_new < d.L))
        wall = wall | escaped
        ok = ~node & ~wall & (err <= tol)

        # Rejected trials: halve and possibly stall
        for pos in np.flatnonzero(~ok):
            i = idx[pos]
            if node[pos]:
                flag(i, ti[pos], xi[pos], "node")
            elif wall[pos]:
                flag(i, ti[pos], xi[pos], "wall")
            dt[i] = 0.5 * h[pos]
            if dt[i] < dt_min:
                stall[i] = (float(ti[pos]), float(xi[pos]))
                active[i] = False
                logger.warning(f"Integration stalled at t={ti[pos]!r}, x={xi[pos]!r} (N={N})")
                logger.debug(f"Last rejected trial for x0={x0[i]!r}: err={err[pos]:.3e}")

        acc = np.flatnonzero(ok)
        if acc.size == 0:
            continue
        ia = idx[acc]
        t[ia] = np.where(landing[acc], target[acc], ti[acc] + h[acc])
        x[ia] = x_new[acc]

        # Accepted positions within wall_eps of a wall shrink the next step
        near_wall = (x[ia] < wall_eps) | (x[ia] > d.L - wall_eps)
        for i in ia[near_wall]:
            flag(i, t[i], x[i], "wall")
            dt[i] = max(0.5 * dt[i], dt_min)
        grow = (~landing[acc]) & (err[acc] < tol / 32.0) & ~near_wall
        dt[ia[grow]] = np.minimum(2.0 * dt[ia[grow]], dt_max)

        landed = ia[landing[acc]]
        if landed.size:
            v, node_l, _ = kernel.field(kernel.phases(t[landed]), x[landed])
            for pos, i in enumerate(landed):
                if node_l[pos]:
                    flag(i, t[i], x[i], "node")
                    v[pos] = np.nan
            out_x[landed, j[landed]] = x[landed]
            out_v[landed, j[landed]] = v
            j[landed] += 1
            finished = landed[j[landed] >= times.size]
            active[finished] = False

    logger.debug(f"Batch of {M} trajectories at N={N} done after {steps} lock-step iterations")

    trajectories = []
    for i in range(M):
        count = int(j[i])
        trajectories.append(Trajectory(
            x0=float(x0[i]),
            N=N,
            t=times[:count].copy(),
            x=out_x[i, :count].copy(),
            v=out_v[i, :count].copy(),
            flags=flags[i],
            flags_dropped=int(dropped[i]),
            stall=stall[i],
        ))
    return trajectories


def integrate(
    state: SpectralState,
    x0: float,
    t_span: Sequence[TimeLike],
    N: Optional[int] = None,
    opts: Optional[IntegratorOptions] = None
) -> Trajectory:
    """
    Integrate one Bohmian trajectory at fixed truncation N.

    Args:
        state: Spectral state
        x0: Starting position, strictly inside the box and off-node
        t_span: (t_a, t_b) with t_a < t_b
        N: Truncation (defaults to all terms)
        opts: Integrator options

    Returns:
        Trajectory sampled on the uniform output grid

    Raises:
        IntegrationStalledError: step fell below dt_min; `partial` holds the samples so far
    """
    opts = opts or IntegratorOptions()
    N = _resolve_truncation(state, N)
    t_a, t_b = _check_span(t_span)
    starts = np.array([float(x0)])
    _check_starts(state, starts)

    times = output_times(state, t_a, t_b, opts.samples_per_period)
    trajectory = _integrate_batch(state, starts, times, N, opts)[0]
    if trajectory.stall is not None:
        t_s, x_s = trajectory.stall
        raise IntegrationStalledError(t_s, x_s, N, partial=trajectory)
    return trajectory


def _ensemble_chunk(state, times, N, opts, x0_chunk) -> List[Trajectory]:
    return _integrate_batch(state, np.asarray(x0_chunk, dtype=float), times, N, opts)


def ensemble(
    state: SpectralState,
    x0_list: Sequence[float],
    t_span: Sequence[TimeLike],
    N: Optional[int] = None,
    opts: Optional[IntegratorOptions] = None,
    threads: int = 1
) -> List[Trajectory]:
    """
    Integrate independent trajectories on a shared output grid.

    Stalls are not raised: the affected Trajectory comes back partial with `stall` set.
    """
    opts = opts or IntegratorOptions()
    N = _resolve_truncation(state, N)
    t_a, t_b = _check_span(t_span)
    starts = np.asarray(x0_list, dtype=float).reshape(-1)
    _check_starts(state, starts)
    if np.any(np.diff(starts) <= 0):
        raise DomainError("ensemble starting positions must be strictly increasing")

    times = output_times(state, t_a, t_b, opts.samples_per_period)
    chunks = [c.tolist() for c in np.array_split(starts, max(1, min(threads, starts.size)))]
    logger.info(f"Integrating {starts.size} trajectories at N={N} over {times.size} output times")
    results = process_map(partial(_ensemble_chunk, state, times, N, opts), chunks, threads)

    trajectories = [tr for chunk in results for tr in chunk]
    stalled = sum(1 for tr in trajectories if tr.stall is not None)
    if stalled:
        logger.warning(f"{stalled} of {len(trajectories)} trajectories stalled at N={N}")
    return trajectories


def _limit_level(state, x0, t_span, opts, N) -> Trajectory:
    return integrate(state, x0, t_span, N, opts)


def integrate_limit(
    state: SpectralState,
    x0: float,
    t_span: Sequence[TimeLike],
    ladder: TruncationLadder,
    opts: Optional[IntegratorOptions] = None,
    threads: int = 1
) -> LimitTrajectory:
    """
    Integrate x0 at every ladder level and compare consecutive levels.

    All levels share one output grid, so the sup-norm deltas are pointwise. The top level
    is the working representative; nothing is extrapolated beyond it.
    """
    opts = opts or IntegratorOptions()
    for N in ladder.levels:
        state.check_truncation(N)

    per_level = process_map(partial(_limit_level, state, x0, t_span, opts), list(ladder.levels), threads)

    deltas = [
        float(np.max(np.abs(upper.x - lower.x)))
        for lower, upper in zip(per_level, per_level[1:])
    ]
    limit_tol = opts.resolved_limit_tol(state.domain)
    converged = deltas[-1] <= limit_tol
    logger.info(
        f"Limit trajectory x0={x0}: deltas={['%.3e' % dlt for dlt in deltas]}, converged={converged}"
    )
    return LimitTrajectory(
        ladder=ladder,
        per_level=per_level,
        deltas=deltas,
        converged=converged,
        limit_tol=limit_tol,
    )


# ========== Transport map ==========

def _invert_cumulative(b: np.ndarray, targets: np.ndarray, refine: int = SERIES_REFINE) -> np.ndarray:
    """
    Solve G_i(u) = g for every row of b and every target g.

    A sine-transform grid of G brackets each root; safeguarded Newton steps with
    G' = rho finish it, falling back to bisection whenever a step leaves the bracket.

    Returns:
        u of shape (rows, targets) in [0, pi]
    """
    targets = np.asarray(targets, dtype=float).reshape(-1)
    B, M = b.shape[0], targets.size
    u_grid, G_grid = cumulative_series_grid(b, refine)

    count = np.sum(G_grid[:, :, None] < targets[None, None, :], axis=1)
    hi_index = np.clip(count, 1, u_grid.size - 1)
    lo_index = hi_index - 1
    G_lo = np.take_along_axis(G_grid, lo_index, axis=1)
    G_hi = np.take_along_axis(G_grid, hi_index, axis=1)
    span = G_hi - G_lo
    frac = np.clip(np.where(span > 0, (targets[None, :] - G_lo) / np.where(span > 0, span, 1.0), 0.5), 0.0, 1.0)

    lo = u_grid[lo_index].ravel()
    hi = u_grid[hi_index].ravel()
    u = lo + frac.ravel() * (hi - lo)
    g = np.tile(targets, B)
    rows = np.repeat(np.arange(B), M)

    active = np.ones(u.size, dtype=bool)
    for _ in range(ROOT_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        G, rho = cumulative_series(b[rows[idx]], u[idx])
        f = G - g[idx]
        below = f < 0
        lo[idx] = np.where(below, u[idx], lo[idx])
        hi[idx] = np.where(below, hi[idx], u[idx])

        newton = u[idx] - f / np.where(rho > 0, rho, 1.0)
        inside = (rho > 0) & (newton >= lo[idx]) & (newton <= hi[idx])
        nxt = np.where(inside, newton, 0.5 * (lo[idx] + hi[idx]))
        exact = f == 0.0
        done = exact | (np.abs(nxt - u[idx]) <= ROOT_TOL) | (hi[idx] - lo[idx] <= ROOT_TOL)
        u[idx] = np.where(exact, u[idx], nxt)
        active[idx[done]] = False

    if np.any(active):
        logger.debug(f"{int(active.sum())} cumulative roots stopped at {ROOT_MAX_ITER} iterations")
    return u.reshape(B, M)


def _transport_block(state, kernel, targets, N, t_block):
    d = state.domain
    M = targets.size
    b = density_cosine_coefficients(state, t_block, N)
    x = np.clip(_invert_cumulative(b, targets) * d.L / math.pi, 0.0, d.L)
    weights = np.repeat(kernel.phases(t_block), M, axis=0)
    v, node, wall = kernel.field(weights, x.ravel())
    shape = (t_block.size, M)
    return x, v.reshape(shape), node.reshape(shape), wall.reshape(shape)


def transport(
    state: SpectralState,
    x0_list: Sequence[float],
    t_span: Sequence[TimeLike],
    N: Optional[int] = None,
    opts: Optional[IntegratorOptions] = None,
    threads: int = 1,
    origin: Optional[TimeLike] = None
) -> List[Trajectory]:
    """
    Trajectories from the conserved cumulative probability, without time stepping.

    The guidance flow carries P_t(x) = integral_0^x |Psi_t|^2 along, so the particle
    started at x0 at the origin time sits where P_t equals P_origin(x0). Positions on
    the output grid are solved independently, which keeps the cost per sample flat
    however fine the grid and however large N.

    Args:
        state: Spectral state
        x0_list: Starting positions, strictly inside the box and off-node
        t_span: (t_a, t_b) with t_a < t_b
        N: Truncation (defaults to all terms)
        opts: Integrator options; only samples_per_period is used
        threads: Worker threads across time blocks
        origin: Time at which the particles sit at x0; defaults to t_a

    Returns:
        One Trajectory per start on the shared output grid; velocities are NaN at nodes

    Raises:
        DomainError: a start on a node, or n_max beyond the dense series limit
    """
    opts = opts or IntegratorOptions()
    N = _resolve_truncation(state, N)
    t_a, t_b = _check_span(t_span)
    origin = t_span[0] if origin is None else origin
    starts = np.asarray(x0_list, dtype=float).reshape(-1)
    _check_starts(state, starts)
    d = state.domain
    M = starts.size

    b0 = density_cosine_coefficients(state, origin, N)
    targets, rho0 = cumulative_series(np.repeat(b0, M, axis=0), math.pi * starts / d.L)
    eps = state.node_threshold(N)
    if np.any(rho0 <= eps):
        raise DomainError(f"initial positions {starts[rho0 <= eps].tolist()} sit on a density node")

    times = output_times(state, t_a, t_b, opts.samples_per_period)
    kernel = _GuidanceKernel(state, N)
    per_block = max(1, settings.GRID_CHUNK_ELEMENTS // (SERIES_REFINE * b0.shape[1] * M))
    blocks = [times[i:i + per_block] for i in range(0, times.size, per_block)]
    logger.info(
        f"Transporting {M} positions at N={N} over {times.size} output times in {len(blocks)} blocks"
    )
    results = thread_map(partial(_transport_block, state, kernel, targets, N), blocks, threads)

    X = np.concatenate([r[0] for r in results]).T
    V = np.concatenate([r[1] for r in results]).T
    node = np.concatenate([r[2] for r in results]).T
    wall = np.concatenate([r[3] for r in results]).T
    V[node | wall] = np.nan
    if float(origin) == t_a:
        X[:, 0] = starts

    trajectories = []
    for i in range(M):
        flags = [TrajectoryFlag(t=float(times[k]), x=float(X[i, k]), kind="node") for k in np.flatnonzero(node[i])]
        flags += [TrajectoryFlag(t=float(times[k]), x=float(X[i, k]), kind="wall") for k in np.flatnonzero(wall[i])]
        flags.sort(key=lambda f: f.t)
        kept = flags[:opts.max_flags]
        trajectories.append(Trajectory(
            x0=float(starts[i]),
            N=N,
            t=times.copy(),
            x=X[i].copy(),
            v=V[i].copy(),
            flags=kept,
            flags_dropped=len(flags) - len(kept),
        ))
    return trajectories


# ========== Quantile oracle ==========

def _pairwise_cumulative(state: SpectralState, t: TimeLike, x: float, N: int) -> float:
    """Integral of |Psi_t|^2 over [0, x] summed over mode pairs; for sparse, very high modes."""
    if N > MAX_QUANTILE_TERMS:
        raise DomainError(f"pairwise cumulative probability supports at most {MAX_QUANTILE_TERMS} terms")
    d = state.domain
    a = state.coefficients[:N] * math.sqrt(2.0 / d.L) * phase_factors(state, t, N)
    k = d.wavenumber(state.modes[:N])

    diff = np.subtract.outer(k, k)
    total = np.add.outer(k, k)
    off = ~np.eye(N, dtype=bool)
    integral = np.empty((N, N))
    safe_diff = np.where(off, diff, 1.0)
    integral[off] = 0.5 * (np.sin(diff * x) / safe_diff - np.sin(total * x) / total)[off]
    integral[~off] = x / 2.0 - np.sin(2.0 * k * x) / (4.0 * k)
    return float(np.real(np.conj(a) @ integral @ a))


def cumulative_probability(state: SpectralState, t: TimeLike, x: float, N: Optional[int] = None) -> float:
    """
    Exact integral of |Psi_t|^2 from 0 to x.

    Summed from the cosine series of the density; states whose modes exceed the dense
    series limit fall back to the pairwise sum.
    """
    N = _resolve_truncation(state, N)
    d = state.domain
    if state.n_max(N) > MAX_SERIES_MODE:
        return _pairwise_cumulative(state, t, x, N)
    b = density_cosine_coefficients(state, t, N)
    G, _ = cumulative_series(b, [math.pi * float(x) / d.L])
    return float(G[0]) * d.L / math.pi


def quantile_position(state: SpectralState, t: TimeLike, x0: float, N: Optional[int] = None) -> float:
    """
    Position at time t of the trajectory started at x0 at time 0.

    In one dimension the guidance flow carries cumulative probability along, so
    P_t(x(t)) = P_0(x0). This gives trajectories without any time stepping.
    """
    N = _resolve_truncation(state, N)
    L = state.domain.L
    if not (0.0 < x0 < L):
        raise DomainError(f"x0 must lie strictly inside (0, {L})")

    if state.n_max(N) > MAX_SERIES_MODE:
        target = _pairwise_cumulative(state, 0.0, x0, N)
        return float(optimize.brentq(
            lambda y: _pairwise_cumulative(state, t, y, N) - target, 0.0, L, xtol=1e-14, rtol=1e-14
        ))

    b0 = density_cosine_coefficients(state, 0.0, N)
    target, _ = cumulative_series(b0, [math.pi * x0 / L])
    u = _invert_cumulative(density_cosine_coefficients(state, t, N), target)
    return float(u[0, 0]) * L / math.pi
