import numpy as np
import pytest

from app.core.domain import TimePoint
from app.core.errors import DomainError, IntegrationStalledError, NodeSingularityError, TruncationRangeError
from app.schemas.run_config import IntegratorOptions
from app.services import dynamics_service
from app.services.dynamics_service import (
    Trajectory,
    TruncationLadder,
    cumulative_probability,
    ensemble,
    integrate,
    integrate_limit,
    output_times,
    _pairwise_cumulative,
    quantile_position,
    transport,
    velocity,
    velocity_grid,
)
from app.services.spectral_service import build_custom


def _period_span(domain, fraction=1):
    return (TimePoint.of_period(domain, 0), TimePoint.of_period(domain, fraction))


class TestVelocity:
    def test_real_wavefunction_has_no_flow(self, uniform_31, domain):
        t0 = TimePoint.of_period(domain, 0)
        for x in (0.1, 0.37, 0.81):
            assert velocity(uniform_31, t0, x) == 0.0

    def test_eigenstate_has_no_flow(self, ground_state):
        for t in (0.0, 0.05, 0.13):
            assert abs(velocity(ground_state, t, 0.3)) < 1e-12

    def test_centre_is_fixed(self, uniform_31, domain):
        t = 0.3 * domain.period
        assert abs(velocity(uniform_31, t, 0.5)) < 1e-9

    def test_mirror_antisymmetry(self, uniform_31, domain):
        t = 0.3 * domain.period
        for x in (0.05, 0.2, 0.41):
            left = velocity(uniform_31, t, x)
            right = velocity(uniform_31, t, 1.0 - x)
            assert abs(left + right) < 1e-10 * max(1.0, abs(left))

    @pytest.mark.parametrize("x", [0.0, 1.0, -0.1, 1.1])
    def test_rejects_wall_and_outside(self, uniform_3, x):
        with pytest.raises(DomainError):
            velocity(uniform_3, 0.1, x)

    def test_node_raises(self, padded_mode_2):
        with pytest.raises(NodeSingularityError) as info:
            velocity(padded_mode_2, 0.1, 0.5)
        assert info.value.x == 0.5
        assert info.value.density < padded_mode_2.node_threshold()

    def test_rejects_bad_truncation(self, uniform_3):
        with pytest.raises(TruncationRangeError):
            velocity(uniform_3, 0.1, 0.3, N=10)

    def test_global_phase_and_energy_offset_invariance(self, uniform_31):
        shifted = uniform_31.with_global_phase(0.7).with_energy_offset(3.3)
        for t, x in [(0.01, 0.2), (0.07, 0.55), (0.12, 0.9)]:
            v = velocity(uniform_31, t, x)
            assert abs(velocity(shifted, t, x) - v) <= 1e-12 * max(1.0, abs(v))

    def test_grid_masks_walls_and_nodes(self, padded_mode_2):
        v = velocity_grid(padded_mode_2, 0.1, [0.0, 0.25, 0.5, 1.0])
        assert np.isnan(v[0]) and np.isnan(v[2]) and np.isnan(v[3])
        assert abs(v[1]) < 1e-12

    def test_grid_matches_pointwise(self, uniform_15):
        x = [0.12, 0.33, 0.74]
        np.testing.assert_allclose(
            velocity_grid(uniform_15, 0.04, x),
            [velocity(uniform_15, 0.04, xi) for xi in x],
            rtol=1e-12,
        )


class TestOutputTimes:
    def test_spacing_and_end(self, uniform_3, domain):
        times = output_times(uniform_3, 0.0, domain.period, 2048)
        assert times.size == 2049
        assert times[-1] == domain.period

    def test_short_span(self, uniform_3, domain):
        times = output_times(uniform_3, 0.0, domain.period / 10000, 2048)
        assert times.tolist() == [0.0, domain.period / 10000]


class TestIntegrate:
    def test_eigenstate_stays_put(self, ground_state, domain):
        tr = integrate(ground_state, 0.3, _period_span(domain))
        assert isinstance(tr, Trajectory)
        assert tr.complete
        assert np.max(np.abs(tr.x - 0.3)) < 1e-12
        assert tr.t[-1] == domain.period

    def test_centre_trajectory(self, uniform_15, domain):
        tr = integrate(uniform_15, 0.5, _period_span(domain))
        assert np.max(np.abs(tr.x - 0.5)) < 1e-9

    def test_mirror_pair(self, uniform_15, domain):
        left = integrate(uniform_15, 0.3, _period_span(domain))
        right = integrate(uniform_15, 0.7, _period_span(domain))
        np.testing.assert_allclose(right.x, 1.0 - left.x, atol=1e-6)

    def test_follows_quantile_oracle(self, uniform_15, domain):
        tr = integrate(uniform_15, 0.3, _period_span(domain))
        for k in (512, 1024, 1843):
            expected = quantile_position(uniform_15, tr.t[k], 0.3)
            assert abs(tr.x[k] - expected) < 1e-5

    def test_samples_and_length(self, uniform_3, domain):
        tr = integrate(uniform_3, 0.4, (0.0, domain.period / 4))
        assert len(tr) == 513
        assert tr.samples[0] == (0.0, 0.4, tr.v[0])

    @pytest.mark.parametrize("x0", [0.0, 1.0, -0.2])
    def test_rejects_bad_start(self, uniform_3, x0):
        with pytest.raises(DomainError):
            integrate(uniform_3, x0, (0.0, 0.1))

    def test_rejects_empty_span(self, uniform_3):
        with pytest.raises(DomainError):
            integrate(uniform_3, 0.4, (0.1, 0.1))

    def test_rejects_start_on_node(self, padded_mode_2):
        with pytest.raises(DomainError):
            integrate(padded_mode_2, 0.5, (0.0, 0.1))

    def test_stall_carries_partial(self, uniform_15, domain):
        opts = IntegratorOptions(tol_step=1e-300, dt_init=domain.period / 2000, dt_min=domain.period / 1000)
        with pytest.raises(IntegrationStalledError) as info:
            integrate(uniform_15, 0.3, _period_span(domain), opts=opts)
        partial = info.value.partial
        assert partial is not None and not partial.complete
        assert len(partial) == 1
        assert info.value.N == 15


class TestEnsemble:
    def test_non_crossing_and_confinement(self, uniform_15, domain):
        starts = np.linspace(0.05, 0.95, 10)
        trajectories = ensemble(uniform_15, starts, _period_span(domain))
        X = np.vstack([tr.x for tr in trajectories])
        assert np.all(np.diff(X, axis=0) > 0)
        assert np.all((X > 0.0) & (X < 1.0))
        assert np.all(X[:5] <= 0.5)

    def test_batch_matches_single(self, uniform_15, domain):
        span = _period_span(domain, 0.5)
        batch = ensemble(uniform_15, [0.2, 0.3, 0.6], span)
        single = integrate(uniform_15, 0.3, span)
        np.testing.assert_allclose(batch[1].x, single.x, rtol=0, atol=1e-6)

    @pytest.mark.integration
    def test_process_pool_matches_inline(self, uniform_15, domain):
        span = _period_span(domain, 0.25)
        starts = [0.1, 0.3, 0.6, 0.8]
        inline = ensemble(uniform_15, starts, span, threads=1)
        pooled = ensemble(uniform_15, starts, span, threads=2)
        for a, b in zip(inline, pooled):
            np.testing.assert_allclose(a.x, b.x, rtol=0, atol=1e-6)

    def test_stall_is_reported_not_raised(self, uniform_15, domain):
        opts = IntegratorOptions(tol_step=1e-300, dt_init=domain.period / 2000, dt_min=domain.period / 1000)
        trajectories = ensemble(uniform_15, [0.3, 0.6], _period_span(domain), opts=opts)
        assert all(tr.stall is not None for tr in trajectories)

    def test_rejects_unsorted_starts(self, uniform_3):
        with pytest.raises(DomainError):
            ensemble(uniform_3, [0.5, 0.3], (0.0, 0.1))


class TestLimit:
    def test_ladder_validation(self):
        with pytest.raises(DomainError):
            TruncationLadder((16, 8, 32))
        with pytest.raises(DomainError):
            TruncationLadder((4, 8))
        assert TruncationLadder.geometric(4, 6).levels == (16, 32, 64)

    def test_single_mode_levels_agree_exactly(self, padded_mode_2, domain):
        result = integrate_limit(padded_mode_2, 0.3, (0.0, 0.2 * domain.period), TruncationLadder((2, 3, 4)))
        assert max(result.deltas) < 1e-12
        assert result.converged

    def test_centre_limit(self, uniform_15, domain):
        result = integrate_limit(uniform_15, 0.5, _period_span(domain), TruncationLadder((4, 8, 15)))
        assert max(result.deltas) < 1e-9
        assert result.limit_estimate.N == 15

    def test_deltas_and_flag(self, uniform_64, domain):
        result = integrate_limit(uniform_64, 0.3, _period_span(domain), TruncationLadder((4, 8, 16, 32)))
        assert len(result.deltas) == 3
        assert all(delta > 0 for delta in result.deltas)
        assert result.converged == (result.deltas[-1] <= result.limit_tol)
        assert result.limit_tol == pytest.approx(1e-3)
        assert all(tr.t.size == result.per_level[0].t.size for tr in result.per_level)

    def test_ladder_beyond_state(self, uniform_3, domain):
        with pytest.raises(TruncationRangeError):
            integrate_limit(uniform_3, 0.3, _period_span(domain), TruncationLadder((1, 2, 4)))


class TestQuantileOracle:
    def test_cumulative_probability_ends(self, uniform_15):
        assert cumulative_probability(uniform_15, 0.07, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert cumulative_probability(uniform_15, 0.07, 1.0) == pytest.approx(uniform_15.norm(), rel=1e-12)

    def test_cumulative_probability_is_monotone(self, uniform_15):
        values = [cumulative_probability(uniform_15, 0.07, x) for x in np.linspace(0.0, 1.0, 41)]
        assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))

    def test_quantile_at_time_zero_is_identity(self, uniform_15):
        assert quantile_position(uniform_15, 0.0, 0.37) == pytest.approx(0.37, abs=1e-12)

    def test_series_matches_pairwise_sum(self, uniform_15, domain):
        for t in (0.07, TimePoint.of_period(domain, 3, 7)):
            for x in (0.05, 0.3, 0.5, 0.91):
                assert cumulative_probability(uniform_15, t, x) == pytest.approx(
                    _pairwise_cumulative(uniform_15, t, x, 15), rel=1e-12, abs=1e-14
                )

    def test_sparse_high_modes_use_pairwise_sum(self, domain):
        state = build_custom(domain, [1, 3, 2 ** 21 + 1], [1.0, 0.5, 0.1])
        assert cumulative_probability(state, 0.02, 1.0) == pytest.approx(state.norm(), rel=1e-12)
        assert quantile_position(state, 0.0, 0.4) == pytest.approx(0.4, abs=1e-10)


class TestTransport:
    def test_matches_runge_kutta(self, uniform_15, domain):
        span = _period_span(domain)
        stepped = integrate(uniform_15, 0.3, span)
        mapped = transport(uniform_15, [0.3], span)[0]
        np.testing.assert_array_equal(mapped.t, stepped.t)
        assert np.max(np.abs(mapped.x - stepped.x)) < 1e-5

    def test_starts_exactly_at_x0(self, uniform_15, domain):
        trajectories = transport(uniform_15, [0.2, 0.7], _period_span(domain, 0.25))
        assert [tr.x[0] for tr in trajectories] == [0.2, 0.7]
        assert all(tr.complete for tr in trajectories)

    def test_non_crossing_and_mirror(self, uniform_15, domain):
        starts = np.linspace(0.05, 0.95, 10)
        X = np.vstack([tr.x for tr in transport(uniform_15, starts, _period_span(domain))])
        assert np.all(np.diff(X, axis=0) > 0)
        np.testing.assert_allclose(X, 1.0 - X[::-1], rtol=0, atol=1e-10)

    def test_velocity_matches_field(self, uniform_15, domain):
        tr = transport(uniform_15, [0.3], _period_span(domain, 0.5))[0]
        for k in (100, 517, 1000):
            assert tr.v[k] == pytest.approx(velocity(uniform_15, tr.t[k], tr.x[k]), rel=1e-9, abs=1e-9)

    def test_later_origin(self, uniform_15, domain):
        t0 = 0.1 * domain.period
        mapped = transport(uniform_15, [0.3], (t0, 0.3 * domain.period), origin=0.0)[0]
        assert mapped.x[0] == pytest.approx(quantile_position(uniform_15, t0, 0.3), abs=1e-12)
        assert mapped.x[-1] == pytest.approx(quantile_position(uniform_15, mapped.t[-1], 0.3), abs=1e-12)

    def test_small_blocks_do_not_change_positions(self, uniform_15, domain, monkeypatch):
        span = _period_span(domain, 0.25)
        reference = transport(uniform_15, [0.3, 0.6], span)
        monkeypatch.setattr(dynamics_service.settings, "GRID_CHUNK_ELEMENTS", 1)
        blocked = transport(uniform_15, [0.3, 0.6], span, threads=3)
        for a, b in zip(reference, blocked):
            np.testing.assert_allclose(b.x, a.x, rtol=0, atol=1e-14)

    def test_rejects_start_on_node(self, padded_mode_2):
        with pytest.raises(DomainError):
            transport(padded_mode_2, [0.5], (0.0, 0.1))

    def test_rejects_empty_span(self, uniform_3):
        with pytest.raises(DomainError):
            transport(uniform_3, [0.4], (0.2, 0.1))


class TestGaugeIndependence:
    def test_trajectories_are_bit_identical(self, uniform_15, domain):
        shifted = uniform_15.with_global_phase(2.1).with_energy_offset(-17.5)
        span = _period_span(domain, 0.5)
        base = integrate(uniform_15, 0.3, span)
        moved = integrate(shifted, 0.3, span)
        np.testing.assert_array_equal(moved.x, base.x)
        np.testing.assert_array_equal(moved.v, base.v)


class TestWallApproach:
    def test_step_shrinks_near_wall(self, uniform_15, domain, mocker, monkeypatch):
        span = (0.0, domain.period / 200)
        opts = IntegratorOptions(dt_min=domain.period / 100000)
        spy = mocker.spy(dynamics_service, "_doubling_step")
        free = integrate(uniform_15, 0.2, span, opts=opts)
        free_steps = spy.call_count
        assert not any(f.kind == "wall" for f in free.flags)

        spy.reset_mock()
        monkeypatch.setattr(dynamics_service, "WALL_EPS", 0.25)
        guarded = integrate(uniform_15, 0.2, span, opts=opts)
        assert spy.call_count > free_steps
        assert any(f.kind == "wall" for f in guarded.flags)
        np.testing.assert_allclose(guarded.x[-1], free.x[-1], atol=1e-6)
