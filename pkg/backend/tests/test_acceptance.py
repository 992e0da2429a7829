"""
Physics checks on full-size states. Slow; run with `pytest -m acceptance`.
"""
import math

import numpy as np
import pytest

from app.core.domain import BoxDomain, TimePoint
from app.services.dynamics_service import TruncationLadder, ensemble, integrate, quantile_position, velocity
from app.schemas.run_config import FitOptions
from app.services.fractal_service import SATURATED, length_scaling_fit, spectrum_dimension, trajectory_window
from app.services.observables_service import (
    continuity_residual,
    energy_along,
    energy_sign_changes,
    ensemble_energy,
    ensemble_energy_quadrature,
    kinetic_peaks,
    quantum_potential,
    recurrence_check,
)
from app.services.spectral_service import (
    build_custom,
    build_parabola,
    build_triangle,
    build_uniform,
    schrodinger_residual,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

DOMAIN = BoxDomain()
T = DOMAIN.period


@pytest.fixture(scope="module")
def state_8191():
    """4096 odd modes of the full-box uniform state."""
    return build_uniform(DOMAIN, 0.0, 1.0, 8191)


@pytest.fixture(scope="module")
def density_fits(state_8191):
    ladder = TruncationLadder.geometric(4, 12)
    return {
        "irrational": length_scaling_fit(state_8191, TimePoint.irrational_sqrt2(DOMAIN), ladder),
        "revival": length_scaling_fit(state_8191, TimePoint.of_period(DOMAIN, 7, 10), ladder),
    }


@pytest.fixture(scope="module")
def ensemble_31():
    """Fifty trajectories at N = 31 over one period, starts symmetric about L/2."""
    state = build_uniform(DOMAIN, 0.0, 1.0, 61)
    starts = np.linspace(0.01, 0.99, 50)
    span = (TimePoint.of_period(DOMAIN, 0), TimePoint.of_period(DOMAIN, 1))
    trajectories = ensemble(state, starts, span, N=31)
    return state, np.vstack([tr.x for tr in trajectories]), trajectories


class TestDensityDimension:
    def test_irrational_time(self, density_fits):
        fit = density_fits["irrational"]
        assert 1.43 <= fit.D_f <= 1.55
        assert SATURATED not in fit.flags

    def test_agrees_with_spectrum(self, density_fits, state_8191):
        spectral = spectrum_dimension(state_8191)
        assert spectral.beta == pytest.approx(2.0, abs=0.01)
        assert abs(density_fits["irrational"].D_f - spectral.D_f) <= 0.08

    def test_revival_time_is_far_less_rough(self, density_fits):
        # Gibbs ripples at the revival's jumps still add a slowly growing length
        revival = density_fits["revival"].slope
        assert revival < 0.2
        assert density_fits["irrational"].slope - revival > 0.2


class TestSmoothStates:
    @pytest.mark.parametrize("builder", [build_triangle, build_parabola])
    def test_density_saturates(self, builder):
        state = builder(DOMAIN, 511)
        fit = length_scaling_fit(state, TimePoint.of_period(DOMAIN, 3, 10), TruncationLadder.geometric(4, 8))
        assert fit.slope < 0.02
        assert SATURATED in fit.flags


class TestTrajectoryDimension:
    def test_centre_trajectory_is_straight(self):
        state = build_uniform(DOMAIN, 0.0, 1.0, 255)
        fit = length_scaling_fit(state, None, TruncationLadder.geometric(4, 7), target="trajectory", x0=0.5)
        assert fit.slope < 1e-6

    def test_off_centre_trajectory_roughens(self):
        state = build_uniform(DOMAIN, 0.0, 1.0, 255)
        fit = length_scaling_fit(state, None, TruncationLadder.geometric(4, 7), target="trajectory", x0=0.3)
        assert fit.lengths[-1] > fit.lengths[0]
        assert fit.D_f > 1.0


TRAJECTORY_STARTS = [0.01, 0.1, 0.4, 0.49, 0.499]


@pytest.fixture(scope="module")
def trajectory_fits():
    """Length fits over a T/64 window at T/sqrt2, ladder 16..1024, top three levels fitted."""
    state = build_uniform(DOMAIN, 0.0, 1.0, 2047)
    window = trajectory_window(state, TimePoint.irrational_sqrt2(DOMAIN), 1.0 / 64.0)
    ladder = TruncationLadder.geometric(4, 10)
    fit_opts = FitOptions(window=(4, 7))
    fits = {
        x0: length_scaling_fit(state, None, ladder, target="trajectory", x0=x0, fit_opts=fit_opts, span=window)
        for x0 in TRAJECTORY_STARTS
    }
    return state, fits


class TestTrajectoryLadder:
    @pytest.mark.parametrize("x0", [0.1, 0.4])
    def test_dimension_in_band(self, trajectory_fits, x0):
        state, fits = trajectory_fits
        fit = fits[x0]
        assert 1.40 <= fit.D_f <= 1.60
        assert abs(fit.D_f - spectrum_dimension(state).D_f) <= 0.08

    @pytest.mark.parametrize("x0", TRAJECTORY_STARTS)
    def test_every_start_completes(self, trajectory_fits, x0):
        fit = trajectory_fits[1][x0]
        assert fit.N_values == [16, 32, 64, 128, 256, 512, 1024]
        assert fit.fit_window == (4, 7)
        assert all(length >= 0.99 / 64.0 for length in fit.lengths)
        assert math.isfinite(fit.D_f)


class TestRecurrence:
    @pytest.mark.parametrize("count", [1, 16, 256, 4096])
    def test_period_at_every_truncation(self, state_8191, count):
        report = recurrence_check(state_8191, N=count, times=[TimePoint.of_period(DOMAIN, 1)], scan_divisions=2)
        assert report.entries[0].sup_diff <= 1e-10

    def test_no_earlier_recurrence(self, state_8191):
        report = recurrence_check(state_8191, N=256)
        assert report.earliest_recurrence is None


class TestEnergy:
    def test_ensemble_energy_grows_linearly(self):
        state = build_uniform(DOMAIN, 0.0, 1.0, 1023)
        for count in (1, 8, 64, 512):
            spectral = ensemble_energy(state, N=count)
            assert spectral == pytest.approx(4.0 * count, abs=1e-9)
            assert ensemble_energy_quadrature(state, N=count) == pytest.approx(spectral, rel=5e-3)

    def test_three_mode_trajectory(self):
        state = build_uniform(DOMAIN, 0.0, 1.0, 5)
        tr = integrate(state, 0.3, (TimePoint.of_period(DOMAIN, 0), TimePoint.of_period(DOMAIN, 1)), N=3)
        trace = energy_along(tr, state)
        assert energy_sign_changes(trace) >= 1

        peaks = kinetic_peaks(trace, state)
        assert peaks
        assert all(p.stationary for p in peaks)
        largest = max(peaks, key=lambda p: p.K)
        assert largest.index == int(np.argmax(trace.K))
        assert largest.power_before > 0 > largest.power_after


class TestDynamics:
    def test_non_crossing(self, ensemble_31):
        _, X, trajectories = ensemble_31
        assert all(tr.complete for tr in trajectories)
        assert np.all(np.diff(X, axis=0) > 0)

    def test_confinement(self, ensemble_31):
        _, X, _ = ensemble_31
        assert np.all(X[:25] <= 0.5) and np.all(X[25:] >= 0.5)

    def test_mirror_symmetry(self, ensemble_31):
        _, X, _ = ensemble_31
        assert np.max(np.abs(X - (1.0 - X[::-1]))) <= 1e-6

    def test_time_reflection(self, ensemble_31):
        _, X, _ = ensemble_31
        assert np.max(np.abs(X[:, ::-1] - X)) <= 1e-5

    def test_quantile_oracle(self, ensemble_31):
        state, X, trajectories = ensemble_31
        for i in (3, 17, 30, 44):
            for k in (300, 1000, 1700):
                expected = quantile_position(state, trajectories[i].t[k], trajectories[i].x0, 31)
                assert abs(X[i, k] - expected) < 1e-5

    def test_gauge_invariance(self, ensemble_31):
        state = ensemble_31[0]
        shifted = state.with_global_phase(1.234).with_energy_offset(-4.5)
        for t, x in [(0.013, 0.21), (0.077, 0.64), (0.151, 0.93)]:
            v = velocity(state, t, x)
            assert abs(velocity(shifted, t, x) - v) <= 1e-12 * max(1.0, abs(v))

        span = (0.0, 0.25 * T)
        base = integrate(state, 0.3, span, N=31)
        moved = integrate(shifted, 0.3, span, N=31)
        np.testing.assert_array_equal(moved.x, base.x)
        np.testing.assert_array_equal(moved.v, base.v)


class TestEigenstates:
    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_oracles(self, n):
        state = build_custom(DOMAIN, [n], [1.0])
        energy = n * n * math.pi ** 2 / 2
        for t, x in [(0.0, 0.13), (0.3 * T, 0.41), (0.9 * T, 0.77)]:
            assert quantum_potential(state, t, x) == pytest.approx(energy, rel=1e-8)
            assert abs(velocity(state, t, x)) < 1e-12
            assert schrodinger_residual(state, t, x) <= 1e-12


class TestContinuity:
    @pytest.mark.parametrize("x", [0.2, 0.45, 0.8])
    def test_second_order(self, x):
        state = build_uniform(DOMAIN, 0.0, 1.0, 5)
        residuals = [abs(continuity_residual(state, 0.1 * T, x, h_x=h, h_t=h)) for h in (4e-3, 2e-3, 1e-3)]
        assert residuals[0] / residuals[1] >= 3.5
        assert residuals[1] / residuals[2] >= 3.5
