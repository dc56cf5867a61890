from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from ecusum import analytic
from ecusum.simulate import (
    EcusumState,
    SimConfig,
    TruncationError,
    exp_statistic_at_stop,
    monte_carlo_run_length,
    record_path,
    simulate_run_length,
    step_cusum,
    step_ecusum,
    truncated_run_length,
)
from ecusum.types import DriftChangeSpec, GeneralizedDrift, Regime

UNIT = DriftChangeSpec(1.0, 1.0)


def _y_from_u(u, occ):
    """Direct construction: u minus its running minimum over {0} and occurrence indices."""
    m = np.empty_like(u)
    low = 0.0
    for k in range(len(u)):
        if occ[k]:
            low = min(low, u[k])
        m[k] = low
    return u - m


class TestSteps:
    def test_reset_on_occurrence(self):
        assert step_ecusum(EcusumState(-0.3), 0.0, True, 1.0).y == 0.0

    def test_continuous_segment(self):
        assert step_ecusum(EcusumState(0.2), 0.1, False, 1.0).y == pytest.approx(0.3)

    def test_fixed_path(self):
        u = np.array([0.0, -1.0, -0.5])
        occ = [False, True, True]
        state, ys = EcusumState(), []
        prev = 0.0
        for uk, ok in zip(u, occ):
            state = step_ecusum(state, uk - prev, ok, 10.0)
            prev = uk
            ys.append(state.y)
        assert ys == pytest.approx([0.0, 0.0, 0.5])
        assert ys == pytest.approx(list(_y_from_u(u, occ)))

    def test_cusum_reflects(self):
        assert step_cusum(EcusumState(0.0), -0.5, 1.0).y == 0.0

    def test_cusum_stops(self):
        assert step_cusum(EcusumState(0.4), 0.3, 0.6).stopped

    def test_stepping_stopped_state(self):
        with pytest.raises(ValueError):
            step_ecusum(EcusumState(1.0, stopped=True), 0.0, False, 1.0)

    @given(st.lists(st.tuples(st.floats(-2, 2), st.booleans()), min_size=1, max_size=50))
    def test_recursion_equals_u_minus_min(self, steps):
        du = np.array([d for d, _ in steps])
        occ = [o for _, o in steps]
        state, ys = EcusumState(), []
        for d, o in steps:
            state = step_ecusum(EcusumState(state.y), d, o, math.inf)
            ys.append(state.y)
        np.testing.assert_allclose(ys, _y_from_u(np.cumsum(du), occ), atol=1e-9)

    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=50))
    def test_all_occurrences_is_cusum(self, du):
        a, b = EcusumState(), EcusumState()
        for d in du:
            a = step_ecusum(EcusumState(a.y), d, True, math.inf)
            b = step_cusum(EcusumState(b.y), d, math.inf)
            assert a.y == b.y


class TestConfig:
    def test_default_dt(self):
        assert SimConfig().resolved_dt(1.0) == 1e-3
        assert SimConfig().resolved_dt(10.0) == pytest.approx(2e-4)

    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"max_time": -1.0}, {"n_paths": 0}, {"workers": 0}, {"seed": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)

    def test_needs_two_paths(self):
        with pytest.raises(ValueError):
            monte_carlo_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=1))

    def test_start_above_threshold(self):
        with pytest.raises(ValueError):
            simulate_run_length("post", UNIT, 1.0, y0=1.5)


class TestSimulation:
    def test_start_at_threshold(self):
        est = monte_carlo_run_length("post", UNIT, 1.0, y0=1.0, cfg=SimConfig(n_paths=50))
        assert est.mean == 0.0 and est.stderr == 0.0

    def test_deterministic_across_workers(self):
        base = simulate_run_length("pre", UNIT, 1.0, cfg=SimConfig(n_paths=3000, seed=9))
        split = simulate_run_length("pre", UNIT, 1.0, cfg=SimConfig(n_paths=3000, seed=9, workers=3))
        assert np.array_equal(base.times, split.times)
        assert np.array_equal(base.final_y, split.final_y)

    def test_path_prefix_stable(self):
        # path i does not depend on how many paths are drawn
        a = simulate_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=100, seed=4))
        b = simulate_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=300, seed=4))
        assert np.array_equal(a.times, b.times[:100])

    def test_seeds_differ(self):
        a = simulate_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=100, seed=1))
        b = simulate_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=100, seed=2))
        assert not np.array_equal(a.times, b.times)

    def test_post_change_near_analytic(self):
        est = monte_carlo_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=20000, seed=3, bridge=True))
        ref = analytic.delay_g(0.0, 1.0, UNIT)
        assert abs(est.mean - ref) <= 3 * est.stderr + 0.005 * ref

    def test_generalized_drift_near_analytic(self):
        drift = GeneralizedDrift(a=0.8, b=1.3)
        spec = DriftChangeSpec(1.0, 0.5)
        est = monte_carlo_run_length(drift, spec, 1.5, y0=-0.5, cfg=SimConfig(n_paths=20000, seed=5, bridge=True))
        ref = analytic.expected_run_length(-0.5, 1.5, 0.8, 1.3, 0.5)
        assert abs(est.mean - ref) <= 3 * est.stderr + 0.005 * ref

    def test_cusum_variant_near_analytic(self):
        est = monte_carlo_run_length("post", UNIT, 1.0, cfg=SimConfig(n_paths=20000, seed=6, bridge=True), variant="cusum")
        ref = analytic.cusum_operating_point(1.0, 1.0).delay
        # reflection at 0 on the grid is not bridge-corrected and carries its own O(sqrt(dt)) bias
        assert abs(est.mean - ref) <= 3 * est.stderr + 0.05 * ref

    def test_no_occurrences_post_change(self):
        # first passage of drift 1/2 to level 1 has mean 2
        est = monte_carlo_run_length("post", DriftChangeSpec(1.0, 0.0), 1.0, cfg=SimConfig(n_paths=20000, seed=7, bridge=True))
        assert abs(est.mean - 2.0) <= 3 * est.stderr + 0.01

    def test_no_occurrences_pre_change_trips_policy(self):
        spec = DriftChangeSpec(1.0, 0.0)
        with pytest.raises(TruncationError):
            simulate_run_length("pre", spec, 1.0, cfg=SimConfig(n_paths=500, seed=8, max_time=50.0))
        sample = simulate_run_length(
            "pre", spec, 1.0,
            cfg=SimConfig(n_paths=3000, seed=8, dt=0.01, max_time=100.0, max_truncated_fraction=1.0, bridge=True),
        )
        # never reaches the level with probability 1 - e^-1
        assert sample.n_truncated / 3000 == pytest.approx(1 - math.exp(-1), abs=0.03)

    def test_pre_change_exceeds_cusum(self):
        cfg = SimConfig(n_paths=5000, seed=12, bridge=True)
        ecusum = monte_carlo_run_length("pre", UNIT, 1.0, cfg=cfg)
        cusum = monte_carlo_run_length("pre", UNIT, 1.0, cfg=cfg, variant="cusum")
        assert ecusum.mean > cusum.mean

    def test_monotone_in_start(self):
        cfg = SimConfig(n_paths=3000, seed=10)
        means = [monte_carlo_run_length("post", UNIT, 0.5, y0=y0, cfg=cfg).mean for y0 in (-2.0, -1.0, 0.0, 0.5)]
        assert means == sorted(means, reverse=True)

    def test_truncated_mean_monotone_in_threshold(self):
        cfg = SimConfig(n_paths=3000, seed=11)
        means = [truncated_run_length(2.0, UNIT, nu, cfg).mean for nu in (0.25, 0.5, 1.0, 2.0)]
        assert means == sorted(means)
        assert means[-1] <= 2.0


class TestExpStatistic:
    def test_small_horizon(self):
        est = exp_statistic_at_stop(1e-3, UNIT, 1.0, SimConfig(n_paths=2000, seed=1))
        assert est.mean == pytest.approx(1.0, abs=0.01)

    def test_zero_threshold(self):
        est = exp_statistic_at_stop(2.0, UNIT, 0.0, SimConfig(n_paths=100, seed=1))
        assert est.mean == 1.0

    def test_at_least_one(self):
        est = exp_statistic_at_stop(2.0, UNIT, 1.0, SimConfig(n_paths=20000, seed=2))
        assert est.mean >= 1 - 3 * est.stderr


class TestRecordedPath:
    def test_record_matches_sample(self):
        cfg = SimConfig(n_paths=20, seed=13)
        sample = simulate_run_length("post", UNIT, 1.0, cfg=cfg)
        for i in (0, 7, 19):
            rec = record_path("post", UNIT, 1.0, cfg, path_index=i)
            assert rec.stopped
            assert rec.stop_time == sample.times[i]
            assert rec.final_y == sample.final_y[i]
            assert rec.t[-1] == rec.stop_time

    def test_regeneration(self):
        # run length from 0 vs residual run length after a reset to 0 at an occurrence
        cfg = SimConfig(n_paths=400, seed=14)
        residual = []
        for i in range(cfg.n_paths):
            rec = record_path("post", UNIT, 2.0, cfg, path_index=i)
            h = np.diff(np.concatenate(([0.0], rec.t)))
            u = np.cumsum(-0.5 * h + rec.dxi)
            y = _y_from_u(u, rec.occ)
            # pre-reset value at occurrence k is y[k-1] + du[k]; a reset to 0 means it was <= 0
            prev = np.concatenate(([0.0], y[:-1]))
            du = np.diff(np.concatenate(([0.0], u)))
            hits = np.flatnonzero(rec.occ & (prev + du <= 0.0) & (y < 2.0))
            if hits.size:
                residual.append(rec.stop_time - rec.t[hits[0]])
        fresh = simulate_run_length("post", UNIT, 2.0, cfg=SimConfig(n_paths=2000, seed=15)).times
        assert len(residual) > 50
        assert ks_2samp(residual, fresh).pvalue > 1e-3
