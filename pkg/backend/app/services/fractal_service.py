"""
Fractal dimensions from curve-length scaling and from the coefficient power spectrum.

Length method: L(N) ~ N^(D_f - 1) across a truncation ladder, so D_f = 1 + slope of
log10 L against log10 N. Trajectory curves are measured over a short time window with
samples fine enough to resolve the fastest phase, T / n_max^2. Spectrum method: |c_n|^2 ~ n^(-beta), D_f = (5 - beta) / 2,
meaningful only for 1 < beta <= 3.
"""
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import stats

from app.core.domain import BoxDomain, TimePoint
from app.core.errors import DomainError, FitError
from app.schemas.fractal import FractalFit
from app.schemas.run_config import FitOptions, IntegratorOptions
from app.services.dynamics_service import TruncationLadder, integrate, transport
from app.services.spectral_service import (
    SpectralState,
    TimeLike,
    build_weierstrass,
    evaluate_grid,
)
from app.workers.pool import process_map

logger = logging.getLogger(__name__)

SATURATED = "saturated"
OUT_OF_REGIME = "out_of_regime"
UNDER_RESOLVED = "under_resolved"
NON_MONOTONE = "non_monotone"


def curve_length(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Polyline length sum sqrt(dx^2 + dy^2), with x and y taken as raw coordinates.

    Raises:
        DomainError: fewer than two points, mismatched shapes or non-finite values
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DomainError("curve_length needs two 1-D arrays of equal length >= 2")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("curve_length needs finite coordinates")
    return float(np.sum(np.hypot(np.diff(x), np.diff(y))))


def fit_loglog(
    x_values: Sequence[float],
    y_values: Sequence[float],
    window: Optional[Tuple[int, int]] = None
):
    """
    Ordinary least squares of log10 y on log10 x over a half-open index window.

    Args:
        x_values: Positive abscissae
        y_values: Positive ordinates
        window: (start, stop); defaults to the top half of the points

    Returns:
        (slope, intercept, stderr, window)
    """
    x = np.asarray(x_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.size != y.size:
        raise FitError("x and y must have the same length")
    if window is None:
        window = (x.size // 2, x.size)
    start, stop = int(window[0]), int(window[1])
    if not (0 <= start < stop <= x.size) or stop - start < 2:
        raise FitError(f"fit window {window} invalid for {x.size} points")

    xs, ys = x[start:stop], y[start:stop]
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise FitError("log-log fit needs strictly positive values")

    result = stats.linregress(np.log10(xs), np.log10(ys))
    stderr = float(result.stderr) if stop - start > 2 else 0.0
    return float(result.slope), float(result.intercept), stderr, (start, stop)


def grid_points(n_max: int) -> int:
    """Uniform grid size resolving mode n_max: max(1001, 8 n_max)."""
    return max(1001, 8 * n_max)


def _density_length(state: SpectralState, t: TimeLike, refine: int, N: int) -> Tuple[float, int]:
    points = (grid_points(state.n_max(N)) - 1) * refine + 1
    x = np.linspace(0.0, state.domain.L, points)
    rho = evaluate_grid(state, t, x, N, order=0).density
    return curve_length(x, rho), points


TRAJECTORY_METHODS = ("transport", "integrate")


def trajectory_window(state: SpectralState, centre: TimeLike, width: float) -> Tuple[float, float]:
    """Span of width * T centred on `centre`, clipped to start no earlier than t = 0."""
    if not width > 0:
        raise DomainError(f"window width must be positive, got {width}")
    half = 0.5 * width * state.domain.period
    return max(0.0, float(centre) - half), float(centre) + half


def trajectory_samples(state: SpectralState, N: int, samples_per_period: int) -> int:
    """Samples per period for a trajectory curve: max(samples_per_period, 8 n_max, n_max^2 / 2)."""
    n_max = state.n_max(N)
    return max(samples_per_period, 8 * n_max, n_max * n_max // 2)


def _trajectory_length(state, x0, span, opts, method, N) -> float:
    d = state.domain
    t_a, t_b = span
    if method == "transport":
        trajectory = transport(state, [x0], span, N, opts, origin=0.0)[0]
        t, x = trajectory.t, trajectory.x
    else:
        trajectory = integrate(state, x0, (0.0, t_b), N, opts)
        keep = trajectory.t >= t_a - 1e-12 * d.period
        t, x = trajectory.t[keep], trajectory.x[keep]
    return curve_length(t / d.period, x / d.L)


def _finish_fit(
    target: str,
    levels: List[int],
    lengths: List[float],
    points: Optional[List[int]],
    fit_opts: FitOptions,
    extra_flags: List[str]
) -> FractalFit:
    slope, intercept, stderr, window = fit_loglog(levels, lengths, fit_opts.window)
    flags = list(extra_flags)
    if slope < fit_opts.saturation_slope:
        flags.append(SATURATED)
    if any(b < 0.99 * a for a, b in zip(lengths, lengths[1:])):
        flags.append(NON_MONOTONE)

    fit = FractalFit(
        method="length",
        target=target,
        N_values=levels,
        lengths=lengths,
        grid_points=points,
        fit_window=window,
        slope=slope,
        intercept=intercept,
        stderr=stderr,
        D_f=1.0 + slope,
        flags=flags,
    )
    logger.info(f"Length fit {target}: slope={slope:.4f} D_f={fit.D_f:.4f} flags={flags}")
    return fit


def length_scaling_fit(
    state: SpectralState,
    t: Optional[TimeLike],
    ladder: TruncationLadder,
    target: str = "density",
    x0: Optional[float] = None,
    fit_opts: Optional[FitOptions] = None,
    integrator: Optional[IntegratorOptions] = None,
    threads: int = 1,
    span: Optional[Tuple[TimeLike, TimeLike]] = None,
    method: str = "transport"
) -> FractalFit:
    """
    Fit curve length against truncation across a ladder.

    For target "density" the curve is (x, rho_t(x)) on max(1001, 8 n_max) points per
    level, in raw units. For target "trajectory" the curve is (t/T, x/L) of the path
    that starts at x0 at t = 0, measured over `span` (default [0, t], t defaulting to T).
    Every level shares one output grid of trajectory_samples points per period, with
    n_max taken at the top level.

    Args:
        state: Spectral state holding at least the top ladder level
        t: Profile time, or end of the trajectory span
        ladder: Truncation levels
        target: "density" or "trajectory"
        x0: Starting position for the trajectory target
        fit_opts: Window, saturation threshold and grid check
        integrator: Integrator options for the trajectory target
        threads: Worker processes across ladder levels
        span: Measured time window of the trajectory target
        method: "transport" (cumulative-probability map) or "integrate" (adaptive RK4)

    Returns:
        FractalFit with D_f = 1 + slope
    """
    fit_opts = fit_opts or FitOptions()
    levels = list(ladder.levels)
    if len(levels) < fit_opts.min_levels:
        raise FitError(f"length scaling needs at least {fit_opts.min_levels} ladder levels")
    for N in levels:
        state.check_truncation(N)

    if target == "density":
        if t is None:
            raise DomainError("a density length fit needs a time")
        results = process_map(partial(_density_length, state, t, 1), levels, threads)
        lengths = [r[0] for r in results]
        points = [r[1] for r in results]

        extra = []
        if fit_opts.check_grid:
            refined, _ = _density_length(state, t, 2, levels[-1])
            change = abs(refined - lengths[-1]) / lengths[-1]
            if change >= fit_opts.grid_tolerance:
                logger.warning(f"Density length changed by {change:.2%} on grid doubling")
                extra.append(UNDER_RESOLVED)
        label = t.label() if isinstance(t, TimePoint) else repr(float(t))
        return _finish_fit(f"density t={label}", levels, lengths, points, fit_opts, extra)

    if target == "trajectory":
        if x0 is None:
            raise DomainError("a trajectory length fit needs x0")
        if method not in TRAJECTORY_METHODS:
            raise DomainError(f"unknown trajectory method {method!r}; use one of {TRAJECTORY_METHODS}")
        integrator = integrator or IntegratorOptions()
        if span is None:
            span = (0.0, state.domain.period if t is None else float(t))
        span = (float(span[0]), float(span[1]))
        if not (0.0 <= span[0] < span[1]):
            raise DomainError(f"trajectory window must satisfy 0 <= t_a < t_b, got {span}")
        samples = trajectory_samples(state, levels[-1], integrator.samples_per_period)
        opts = integrator.model_copy(update={"samples_per_period": samples})
        logger.info(
            f"Trajectory lengths x0={x0!r} over t in [{span[0]:.6g}, {span[1]:.6g}] "
            f"with {samples} samples per period ({method})"
        )
        measure = partial(_trajectory_length, state, x0, span, opts, method)
        lengths = process_map(measure, levels, threads)
        return _finish_fit(f"trajectory x0={x0!r}", levels, lengths, None, fit_opts, [])

    raise DomainError(f"unknown length target {target!r}; use 'density' or 'trajectory'")


def spectrum_dimension(state: SpectralState, fit_opts: Optional[FitOptions] = None) -> FractalFit:
    """
    Fit log |c_n|^2 against log n over all non-zero modes.

    beta = -slope and D_f = (5 - beta) / 2; out-of-regime unless 1 < beta <= 3.
    """
    fit_opts = fit_opts or FitOptions()
    power = np.abs(state.coefficients) ** 2
    nonzero = power > 0
    modes = state.modes[nonzero]
    power = power[nonzero]
    if modes.size < fit_opts.min_modes:
        raise FitError(f"spectrum fit needs {fit_opts.min_modes} non-zero modes, got {modes.size}")

    slope, intercept, stderr, window = fit_loglog(modes, power, (0, modes.size))
    beta = -slope
    flags = [] if 1.0 < beta <= 3.0 else [OUT_OF_REGIME]
    fit = FractalFit(
        method="spectrum",
        target=f"spectrum {state.label.value}",
        N_values=[int(n) for n in modes],
        lengths=[float(p) for p in power],
        fit_window=window,
        slope=slope,
        intercept=intercept,
        stderr=stderr,
        D_f=(5.0 - beta) / 2.0,
        beta=beta,
        flags=flags,
    )
    logger.info(f"Spectrum fit {state.label.value}: beta={beta:.4f} D_f={fit.D_f:.4f} flags={flags}")
    return fit


def weierstrass_dimension_scan(
    domain: BoxDomain,
    s_values: Sequence[float],
    n: int,
    R_values: Sequence[int],
    t: TimeLike,
    fit_opts: Optional[FitOptions] = None,
    threads: int = 1
) -> Dict[float, FractalFit]:
    """
    Density length fits of lacunary states for several exponents s.

    Ladder level R + 1 keeps the modes n^0..n^R. Values are reported as measured.
    """
    levels = [int(R) + 1 for R in R_values]
    ladder = TruncationLadder(levels=tuple(levels))
    fits = {}
    for s in s_values:
        state = build_weierstrass(domain, s, n, max(R_values))
        fits[float(s)] = length_scaling_fit(state, t, ladder, "density", fit_opts=fit_opts, threads=threads)
    return fits


def lacunary_beta(s: float) -> float:
    """Spectral exponent of the cumulative power of a lacunary state: 2 (2 - s)."""
    if not (0.0 < s < 2.0):
        raise DomainError(f"s must satisfy 0 < s < 2, got {s}")
    return 2.0 * (2.0 - s)
