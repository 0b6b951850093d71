import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lrdcpd.baselines import (
    SMOOTHING_GRID,
    EwmaState,
    ewma_cusum_statistic,
    ewma_filter,
    ewma_threshold_statistic,
    ewma_update,
    grid_search,
    lrf_coefficients,
    pca_residual_statistic,
    ssa_fit,
    ssa_forecast_one_ahead,
    ssa_trend,
)

values = arrays(np.float64, st.integers(2, 80), elements=st.floats(-100, 100))


def sine(n, period=288.0, amp=1.5, phase=0.0):
    return amp * np.sin(2 * np.pi * np.arange(n) / period + phase)


class TestEwma:
    def test_state_validation(self):
        with pytest.raises(ValueError):
            EwmaState(0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            EwmaState(0.0, -1.0, 0.5)

    @given(values, st.sampled_from(SMOOTHING_GRID))
    def test_filter_matches_recursion(self, x, a):
        res = ewma_filter(x, a)
        state = None
        for t, v in enumerate(x):
            state = ewma_update(state, v, a)
            assert res.mean[t] == pytest.approx(state.mean, rel=1e-9, abs=1e-9)
            assert res.sigma[t] ** 2 == pytest.approx(state.variance, rel=1e-9, abs=1e-9)

    def test_first_update_step(self):
        s = ewma_update(ewma_update(None, 2.0, 0.1), 4.0)
        assert s.mean == pytest.approx(2.2)
        assert s.variance == pytest.approx(0.9 * 0.1 * 4.0)

    def test_constant_series(self):
        res = ewma_filter(np.full(50, 3.0))
        assert res.zero_scale_count == 50
        np.testing.assert_array_equal(res.residuals, 0.0)
        np.testing.assert_array_equal(ewma_threshold_statistic(np.full(50, 3.0)), 0.0)

    @given(values, st.floats(0.1, 50).flatmap(lambda c: st.sampled_from([c, -c])))
    def test_scale_equivariance(self, x, c):
        a, b = ewma_filter(x), ewma_filter(c * x)
        np.testing.assert_allclose(b.mean, c * a.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(b.sigma, abs(c) * a.sigma, rtol=1e-7, atol=1e-9)
        big = a.sigma > 1e-6 * np.max(np.abs(x), initial=1.0)
        np.testing.assert_allclose(b.residuals[big], np.sign(c) * a.residuals[big], rtol=1e-6, atol=1e-9)

    def test_causal(self, rng):
        x = rng.standard_normal(100)
        full = ewma_filter(x)
        part = ewma_filter(x[:60])
        np.testing.assert_array_equal(part.mean, full.mean[:60])
        np.testing.assert_array_equal(part.residuals, full.residuals[:60])

    def test_bad_input(self):
        with pytest.raises(ValueError):
            ewma_filter(np.zeros(5), 0.0)
        with pytest.raises(ValueError):
            ewma_filter(np.zeros(0))


class TestThresholdStatistic:
    def test_inclusive_window(self, rng):
        s = ewma_threshold_statistic(rng.standard_normal(40), h=-1e9, window=10)
        np.testing.assert_array_equal(s[10:], 11)
        np.testing.assert_array_equal(s[:10], np.arange(1, 11))

    def test_matches_loop(self, rng):
        x = rng.standard_normal(200)
        r = ewma_filter(x).residuals
        s = ewma_threshold_statistic(x, h=1.0, window=7)
        loop = [np.sum(r[max(0, k - 7) : k + 1] >= 1.0) for k in range(200)]
        np.testing.assert_array_equal(s, loop)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            ewma_threshold_statistic(np.zeros(5), window=0)


class TestEwmaCusum:
    def test_constant_zero(self):
        np.testing.assert_array_equal(ewma_cusum_statistic(np.full(30, 1.0)), 0.0)

    def test_is_cusum_of_residuals(self, rng):
        from lrdcpd.detectors import statistic_trajectory

        x = rng.standard_normal(100)
        np.testing.assert_array_equal(
            ewma_cusum_statistic(x, 2.0, 0.1), statistic_trajectory("cusum", ewma_filter(x, 0.1).residuals, delta=2.0)
        )


def test_grid_search_first_max():
    best, score = grid_search(lambda a, b: -((a - 1) ** 2) + 0 * b, {"a": [0, 1, 2, 1], "b": [5, 6]})
    assert best == {"a": 1, "b": 5} and score == 0


class TestSsa:
    def test_sine_rank_two(self):
        model = ssa_fit(sine(600), 48, rank=2)
        assert model.explained_mass(2) >= 0.99

    def test_white_noise_spread(self, rng):
        model = ssa_fit(rng.standard_normal(1000), 48, rank=2)
        assert model.explained_mass(2) < 0.5

    def test_default_rank_rule(self, rng):
        assert ssa_fit(sine(1000), 288).rank == 2
        assert ssa_fit(rng.standard_normal(1000), 48).rank == 10

    def test_orthonormal_basis(self, rng):
        model = ssa_fit(rng.standard_normal(800) + sine(800), 100)
        np.testing.assert_allclose(model.basis.T @ model.basis, np.eye(model.rank), atol=1e-10)

    def test_projector_idempotent(self, rng):
        P = ssa_fit(rng.standard_normal(800), 60).projector
        np.testing.assert_allclose(P @ P, P, atol=1e-10)

    def test_refit_same_up_to_sign(self, rng):
        x = rng.standard_normal(500) + sine(500, 50)
        a, b = ssa_fit(x, 48).basis, ssa_fit(x.copy(), 48).basis
        np.testing.assert_allclose(np.abs(a.T @ b), np.eye(a.shape[1]), atol=1e-10)

    def test_rank_deficient_warns(self):
        with pytest.warns(RuntimeWarning, match="numerical rank"):
            model = ssa_fit(sine(600, 48), 48, rank=6)
        assert model.rank == 2

    def test_short_history(self):
        with pytest.raises(ValueError, match="2L"):
            ssa_fit(np.zeros(100), 60)

    def test_zero_history(self):
        with pytest.raises(ValueError):
            ssa_fit(np.zeros(200), 48)


class TestPcaStatistic:
    def test_span_series_is_zero(self):
        model = ssa_fit(sine(600, 48), 48, rank=2)
        p = pca_residual_statistic(model, sine(300, 48, phase=0.7, amp=3.0))
        assert np.all(np.isnan(p[:47]))
        assert np.nanmax(p) < 1e-8

    def test_orthogonal_spike(self):
        model = ssa_fit(sine(600, 48), 48, rank=2)
        x = sine(200, 48)
        c = 4.0
        x[120] += c
        p = pca_residual_statistic(model, x)
        e = np.zeros(48)
        e[-1] = c
        expected = np.linalg.norm(e - model.projector @ e)
        assert p[120] == pytest.approx(expected, rel=1e-8)
        assert p[120] > 0

    def test_invariant_to_span_component(self, rng):
        model = ssa_fit(rng.standard_normal(600) + sine(600, 48), 48)
        x = rng.standard_normal(200)
        W = np.lib.stride_tricks.sliding_window_view(x, 48)
        v = model.basis @ rng.standard_normal(model.rank)
        shifted = W + v
        res = shifted - shifted @ model.projector
        np.testing.assert_allclose(np.linalg.norm(res, axis=1), pca_residual_statistic(model, x)[47:], atol=1e-10)

    def test_short_series(self):
        model = ssa_fit(sine(600, 48), 48)
        assert np.all(np.isnan(pca_residual_statistic(model, np.zeros(30))))


class TestSsaTrendForecast:
    def test_trend_reproduces_span(self):
        model = ssa_fit(sine(600, 48), 48, rank=2)
        x = sine(300, 48, phase=1.1)
        np.testing.assert_allclose(ssa_trend(model, x), x, atol=1e-10)

    def test_forecast_sine(self):
        model = ssa_fit(sine(600, 48), 48, rank=2)
        x = sine(300, 48, phase=0.3)
        fc = ssa_forecast_one_ahead(model, x)
        assert np.all(np.isnan(fc[:47]))
        np.testing.assert_allclose(fc[47:], x[47:], atol=1e-8)

    def test_lrf_length(self):
        model = ssa_fit(sine(600, 48), 48, rank=2)
        assert lrf_coefficients(model).shape == (47,)

    def test_trend_short(self):
        with pytest.raises(ValueError):
            ssa_trend(ssa_fit(sine(600, 48), 48), np.zeros(10))
