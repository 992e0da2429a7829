"""
Command handlers behind the qfractal CLI.

Each handler takes a validated RunConfig, writes its artifacts plus run.json into the
output directory and returns a CommandResult. Numerical failures are raised after the
files produced so far are on disk.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional
import logging

import numpy as np

from app import __version__
from app.core.config import settings
from app.core.domain import TimePoint, time_grid
from app.core.errors import IntegrationStalledError
from app.schemas.run_config import RunConfig
from app.services import dynamics_service, fractal_service, observables_service
from app.services.export_service import ExportService
from app.services.spectral_service import (
    SpectralState,
    build_parabola,
    build_triangle,
    build_uniform,
    build_weierstrass,
    read_coefficients,
    write_coefficients,
)

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    command: str
    out_dir: str
    files: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def build_state(config: RunConfig) -> SpectralState:
    """Construct the spectral state described by config.state."""
    domain = config.domain.build()
    spec = config.state
    kwargs = {} if spec.normalize is None else {"normalize": spec.normalize}

    if spec.kind == "uniform":
        x2 = domain.L if spec.x2 is None else spec.x2
        state = build_uniform(domain, spec.x1, x2, spec.n_max, **kwargs)
    elif spec.kind == "weierstrass":
        state = build_weierstrass(domain, spec.s, spec.n, spec.R, **kwargs)
    elif spec.kind == "triangle":
        state = build_triangle(domain, spec.n_max)
    elif spec.kind == "parabola":
        state = build_parabola(domain, spec.n_max)
    else:
        state = read_coefficients(spec.coefficients_file, domain, **kwargs)

    if spec.energy_offset:
        state = state.with_energy_offset(spec.energy_offset)
    logger.info(f"Built {state.label.value} state with {state.n_terms} terms (n_max={state.n_max()})")
    return state


def _begin(command: str, config: RunConfig, out_dir: Optional[str]) -> ExportService:
    directory = out_dir or config.output_dir or settings.OUTPUT_DIR
    export = ExportService(directory)
    export.write_json("run.json", {
        "command": command,
        "version": __version__,
        "config": config.model_dump(mode="json"),
    })
    logger.info(f"Running {command} into {directory}")
    return export


def _finish(command: str, export: ExportService, summary: Dict[str, Any]) -> CommandResult:
    return CommandResult(command=command, out_dir=str(export.out_dir), files=list(export.written), summary=summary)


def _metadata(state: SpectralState, N: Optional[int] = None, **extra: Any) -> Dict[str, Any]:
    d = state.domain
    meta = {
        "label": state.label.value,
        "params": state.params,
        "L": repr(d.L),
        "m": repr(d.m),
        "hbar": repr(d.hbar),
        "terms": state.n_terms,
    }
    if N is not None:
        meta["N"] = N
        meta["n_max"] = state.n_max(N)
    meta.update(extra)
    return meta


def _x_tag(x0: float) -> str:
    return repr(float(x0))


def _spatial_grid(config: RunConfig, state: SpectralState, N: int) -> np.ndarray:
    points = config.grid.nx or fractal_service.grid_points(state.n_max(N))
    return np.linspace(0.0, state.domain.L, points)


def _span(config: RunConfig, state: SpectralState):
    start = TimePoint.parse(state.domain, config.time.t_start)
    end = TimePoint.parse(state.domain, config.time.t_end)
    return start, end


# ========== Commands ==========

def cmd_build_state(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Write coefficients.txt and a state.json summary."""
    export = _begin("build-state", config, out_dir)
    state = build_state(config)

    write_coefficients(export.path("coefficients.txt"), state)
    export.written.append("coefficients.txt")
    summary = {
        "label": state.label.value,
        "params": state.params,
        "terms": state.n_terms,
        "modes": [int(n) for n in state.modes],
        "n_max": state.n_max(),
        "norm": state.norm(),
        "energy_spectral": observables_service.ensemble_energy(state),
        "energy_offset": state.energy_offset,
    }
    export.write_json("state.json", summary)
    return _finish("build-state", export, summary)


def cmd_carpet(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Density carpet over [t_start, t_end] x [0, L]."""
    export = _begin("carpet", config, out_dir)
    state = build_state(config)
    N = state.check_truncation(config.grid.N) if config.grid.N else state.n_terms
    start, end = _span(config, state)
    times = time_grid(state.domain, start, end, config.grid.nt)
    x = _spatial_grid(config, state, N)

    carpet = observables_service.density_carpet(state, times, x, N, threads)
    meta = _metadata(state, N, nx=x.size, nt=len(times), x_grid=f"linspace(0, {state.domain.L!r}, {x.size})",
                     t_start=start.label(), t_end=end.label())
    columns = {"t": carpet.t}
    columns.update({f"rho_{i}": carpet.rho[:, i] for i in range(x.size)})
    export.write_csv("carpet.csv", columns, meta)

    binary = settings.WRITE_CARPET_BINARY if config.write_carpet_binary is None else config.write_carpet_binary
    if binary:
        export.write_matrix("carpet.bin", carpet.rho, {
            **meta, "x_grid": carpet.x, "t_grid": carpet.t, "t_labels": carpet.labels
        })

    summary = {
        "rows": len(times),
        "points": int(x.size),
        "first_last_sup_diff": float(np.max(np.abs(carpet.rho[-1] - carpet.rho[0]))),
    }
    return _finish("carpet", export, summary)


def cmd_trajectories(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Ensemble trajectories at fixed N, plus ladder limits per x0 when enabled."""
    export = _begin("trajectories", config, out_dir)
    state = build_state(config)
    spec = config.trajectories
    start, end = _span(config, state)

    ensemble = dynamics_service.ensemble(state, spec.x0, (start, end), spec.N, config.integrator, threads)
    columns = {
        "t": np.concatenate([tr.t for tr in ensemble]),
        "x": np.concatenate([tr.x for tr in ensemble]),
        "v": np.concatenate([tr.v for tr in ensemble]),
        "N": np.concatenate([np.full(len(tr), tr.N) for tr in ensemble]),
        "x0": np.concatenate([np.full(len(tr), tr.x0) for tr in ensemble]),
    }
    export.write_csv(f"trajectories_N{spec.N}.csv", columns,
                     _metadata(state, spec.N, x0=spec.x0, t_start=start.label(), t_end=end.label()))

    summary: Dict[str, Any] = {
        "trajectories": len(ensemble),
        "stalled": [tr.x0 for tr in ensemble if tr.stall is not None],
        "flags": {_x_tag(tr.x0): len(tr.flags) + tr.flags_dropped for tr in ensemble},
        "limits": {},
    }

    if spec.limit:
        ladder = dynamics_service.TruncationLadder(levels=tuple(config.ladder.levels))
        for x0 in spec.x0:
            limit = dynamics_service.integrate_limit(state, x0, (start, end), ladder, config.integrator, threads)
            top = limit.limit_estimate
            export.write_json(f"limit_x0_{_x_tag(x0)}.json", {
                "x0": x0,
                "ladder": list(ladder.levels),
                "deltas": limit.deltas,
                "converged": limit.converged,
                "limit_tol": limit.limit_tol,
                "top_level": {"N": top.N, "t": top.t, "x": top.x, "v": top.v},
            })
            summary["limits"][_x_tag(x0)] = {"deltas": limit.deltas, "converged": limit.converged}

    first_stall = next((tr for tr in ensemble if tr.stall is not None), None)
    if first_stall is not None:
        t_s, x_s = first_stall.stall
        raise IntegrationStalledError(t_s, x_s, first_stall.N, partial=first_stall)
    return _finish("trajectories", export, summary)


def cmd_profile(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Density, phase and quantum potential at each profile time."""
    export = _begin("profile", config, out_dir)
    state = build_state(config)
    N = state.check_truncation(config.grid.N) if config.grid.N else state.n_terms
    x = _spatial_grid(config, state, N)

    masses = []
    for i, value in enumerate(config.time.profile_times):
        time = TimePoint.parse(state.domain, value)
        profile = observables_service.density_phase(state, time, x, N, threads)
        export.write_csv(f"profile_t{i}.csv", {
            "x": profile.x, "rho": profile.rho, "S": profile.S, "Q": profile.Q,
        }, _metadata(state, N, t=time.label(), nx=x.size))
        masses.append(profile.mass())
    return _finish("profile", export, {"times": len(masses), "masses": masses})


def cmd_energy(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Energy traces along trajectories and the ensemble energy table against N."""
    export = _begin("energy", config, out_dir)
    state = build_state(config)
    spec = config.energy
    start, end = _span(config, state)

    summary: Dict[str, Any] = {"traces": {}}
    for x0 in spec.x0:
        trajectory = dynamics_service.integrate(state, x0, (start, end), spec.N, config.integrator)
        trace = observables_service.energy_along(trajectory, state)
        export.write_csv(f"energy_x0_{_x_tag(x0)}.csv", {
            "t": trace.t, "x": trace.x, "K": trace.K, "Q": trace.Q, "E": trace.E,
        }, _metadata(state, spec.N, x0=x0))
        matches = observables_service.match_kinetic_peaks(trace)
        peaks = observables_service.kinetic_peaks(trace, state)
        summary["traces"][_x_tag(x0)] = {
            "sign_changes": observables_service.energy_sign_changes(trace),
            "kinetic_peaks": len(peaks),
            "stationary_peaks": sum(1 for p in peaks if p.stationary),
            "peaks_in_wells": sum(1 for p in peaks if p.in_potential_well),
            "matched_peaks": sum(1 for m in matches if m.q_index is not None),
        }

    rows = observables_service.ensemble_energy_table(state, spec.counts, spec.quadrature, threads)
    export.write_csv("ensemble_energy.csv", {
        "count": [r.count for r in rows],
        "n_max": [r.n_max for r in rows],
        "spectral": [r.spectral for r in rows],
        "quadrature": [np.nan if r.quadrature is None else r.quadrature for r in rows],
    }, _metadata(state))
    summary["ensemble_energy"] = {r.count: r.spectral for r in rows}
    return _finish("energy", export, summary)


def cmd_fractal(config: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> CommandResult:
    """Length-scaling fits of densities and trajectories, the spectrum fit and lacunary scans."""
    export = _begin("fractal", config, out_dir)
    state = build_state(config)
    spec = config.fractal
    summary: Dict[str, Any] = {}

    if spec.density:
        ladder = dynamics_service.TruncationLadder(levels=tuple(config.ladder.levels))
        for i, value in enumerate(config.time.fractal_times):
            time = TimePoint.parse(state.domain, value)
            fit = fractal_service.length_scaling_fit(state, time, ladder, "density",
                                                     fit_opts=config.fit, threads=threads)
            export.write_json(f"fractal_density_t{i}.json", fit.model_dump(mode="json"))
            summary[f"density_t{i}"] = {"D_f": fit.D_f, "flags": fit.flags}

    if spec.trajectory_x0:
        ladder = dynamics_service.TruncationLadder(levels=tuple(spec.trajectory_ladder))
        centre = TimePoint.parse(state.domain, spec.trajectory_centre)
        window = fractal_service.trajectory_window(state, centre, spec.trajectory_width)
        for x0 in spec.trajectory_x0:
            fit = fractal_service.length_scaling_fit(state, None, ladder, "trajectory", x0=x0,
                                                     fit_opts=config.fit, integrator=config.integrator,
                                                     threads=threads, span=window,
                                                     method=spec.trajectory_method)
            export.write_json(f"fractal_trajectory_x0_{_x_tag(x0)}.json", fit.model_dump(mode="json"))
            summary[f"trajectory_x0_{_x_tag(x0)}"] = {"D_f": fit.D_f, "flags": fit.flags}

    if spec.spectrum:
        fit = fractal_service.spectrum_dimension(state, config.fit)
        export.write_json("fractal_spectrum.json", fit.model_dump(mode="json"))
        summary["spectrum"] = {"beta": fit.beta, "D_f": fit.D_f, "flags": fit.flags}

    if spec.weierstrass_s:
        first = config.time.fractal_times[0] if config.time.fractal_times else "irrational sqrt2"
        time = TimePoint.parse(state.domain, first)
        fits = fractal_service.weierstrass_dimension_scan(
            state.domain, spec.weierstrass_s, spec.weierstrass_n, spec.weierstrass_R, time,
            config.fit, threads,
        )
        for s, fit in fits.items():
            export.write_json(f"fractal_weierstrass_s{s!r}.json", fit.model_dump(mode="json"))
            summary[f"weierstrass_s{s!r}"] = {"D_f": fit.D_f, "flags": fit.flags}

    return _finish("fractal", export, summary)


COMMANDS = {
    "build-state": cmd_build_state,
    "carpet": cmd_carpet,
    "trajectories": cmd_trajectories,
    "profile": cmd_profile,
    "energy": cmd_energy,
    "fractal": cmd_fractal,
}
