import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrdcpd.change_model import DataFormatError
from lrdcpd.detectors import DetectorBank, SignalTrajectory
from lrdcpd.ensemble import (
    EnsembleModel,
    NonFiniteLossError,
    TrainOptions,
    aggregate,
    alarm_segments,
    arer_exact,
    arer_surrogate,
    detect,
    lagged_features,
    load_model,
    save_model,
    surrogate_gradient,
    train,
)


def gradient_fixture(seed, n_det=3, lags=1, length=200):
    rng = np.random.default_rng(seed)
    signals, labels = [], []
    for _ in range(3):
        y = np.zeros(length, dtype=int)
        a = rng.integers(20, length - 40)
        y[a : a + rng.integers(5, 30)] = 1
        signals.append(np.abs(rng.normal(0.5, 0.5, (n_det, length))) + 1.5 * y)
        labels.append(y)
    model = EnsembleModel(weights=rng.normal(0, 0.5, (n_det, lags + 1)), bias=rng.normal(0, 0.5))
    return model, signals, labels


def finite_difference(model, signals, labels, eps=1e-6):
    def f(w, b):
        return arer_surrogate(EnsembleModel(weights=w, bias=b), signals, labels)

    w0 = model.weights
    g = np.zeros_like(w0)
    for idx in np.ndindex(w0.shape):
        e = np.zeros_like(w0)
        e[idx] = eps
        g[idx] = (f(w0 + e, model.bias) - f(w0 - e, model.bias)) / (2 * eps)
    gb = (f(w0, model.bias + eps) - f(w0, model.bias - eps)) / (2 * eps)
    return g, gb


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


class TestAggregate:
    def test_zero_model(self, rng):
        a = aggregate(EnsembleModel.zeros(5, 2), rng.random((5, 40))).values
        np.testing.assert_array_equal(a, 0.5)

    def test_saturation(self):
        a = aggregate(EnsembleModel(weights=[[1.0]], signal_cap=np.inf), np.array([[0.0, 60.0]]))
        assert a.values[0] == 0.5 and a.values[1] > 1 - 1e-12

    @given(st.integers(0, 4), st.integers(0, 2), st.integers(0, 29))
    def test_monotone_in_each_input(self, k, j, t):
        rng = np.random.default_rng(k + 10 * j + 100 * t)
        model = EnsembleModel(weights=rng.random((5, 3)) + 0.1, bias=1.0)
        s = rng.random((5, 30))
        bumped = s.copy()
        bumped[k, t] += 0.5
        before, after = aggregate(model, s).logits, aggregate(model, bumped).logits
        if t + j < 30:
            assert after[t + j] > before[t + j]
        assert np.all(after >= before)

    def test_strictly_inside_unit_interval(self):
        a = aggregate(EnsembleModel(weights=[[100.0]], signal_cap=1e6), np.array([[-1e4, 0.0, 1e4]])).values
        assert np.all((a > 0) & (a < 1))

    def test_lag_boundary_zero(self):
        X = lagged_features(np.array([[1.0, 2.0, 3.0]]), lags=2)
        np.testing.assert_array_equal(X[:, 0, :], [[1, 0, 0], [2, 1, 0], [3, 2, 1]])

    def test_signal_cap(self):
        X = lagged_features(np.array([[1.0, 50.0]]), lags=0, cap=10.0)
        np.testing.assert_array_equal(X[:, 0, 0], [1.0, 10.0])

    def test_accepts_signal_trajectories(self, rng):
        raw = rng.random((2, 20))
        sigs = [SignalTrajectory(raw[0], 2.0), SignalTrajectory(raw[1], 4.0)]
        model = EnsembleModel(weights=np.ones((2, 1)))
        np.testing.assert_array_equal(aggregate(model, sigs).values, aggregate(model, raw / [[2.0], [4.0]]).values)

    def test_length_mismatch(self):
        sigs = [SignalTrajectory(np.ones(5), 1.0), SignalTrajectory(np.ones(6), 1.0)]
        with pytest.raises(ValueError):
            aggregate(EnsembleModel.zeros(2, 0), sigs)
        with pytest.raises(ValueError):
            aggregate(EnsembleModel.zeros(3, 0), np.ones((2, 5)))

    def test_invalid_model(self):
        with pytest.raises(ValueError):
            EnsembleModel.zeros(2, 1, threshold=1.0)
        with pytest.raises(ValueError):
            EnsembleModel(weights=[[np.nan]])


class TestDecisionInvariance:
    def signals(self, raw, h, c):
        return [SignalTrajectory(c * r, c * hk) for r, hk in zip(raw, h)]

    def test_power_of_two_scale_bit_identical(self, rng):
        raw, h = rng.random((3, 100)) * 4, np.array([1.3, 0.7, 2.1])
        model = EnsembleModel(weights=rng.normal(size=(3, 2)), bias=0.4)
        base = detect(model, self.signals(raw, h, 1.0))
        for c in (0.25, 8.0, 1024.0):
            other = detect(model, self.signals(raw, h, c))
            np.testing.assert_array_equal(other.values, base.values)
            assert other.stopping_time == base.stopping_time

    @given(st.floats(1e-3, 1e3))
    def test_any_scale_same_decisions(self, c):
        rng = np.random.default_rng(0)
        raw, h = rng.random((3, 100)) * 4, np.array([1.3, 0.7, 2.1])
        model = EnsembleModel(weights=rng.normal(size=(3, 2)), bias=0.4)
        base = detect(model, self.signals(raw, h, 1.0))
        other = detect(model, self.signals(raw, h, c))
        np.testing.assert_allclose(other.values, base.values, rtol=1e-13)
        assert other.segments == base.segments


class TestDetect:
    def test_no_alarm(self):
        traj = detect(EnsembleModel(weights=[[0.0]], bias=1.0), np.zeros((1, 50)))
        assert traj.stopping_time is None and traj.segments == []

    def test_single_crossing(self):
        s = np.zeros((1, 200))
        s[0, 100:] = 5.0
        traj = detect(EnsembleModel(weights=[[1.0]], bias=1.0), s)
        assert traj.stopping_time == 100
        assert traj.segments == [(100, 199)]

    @given(st.lists(st.booleans(), min_size=1, max_size=60))
    def test_segments_are_maximal_runs(self, bits):
        mask = np.array(bits)
        segs = alarm_segments(mask.astype(float), 0.5)
        rebuilt = np.zeros(mask.size, dtype=bool)
        for a, b in segs:
            rebuilt[a : b + 1] = True
            assert a == 0 or not mask[a - 1]
            assert b == mask.size - 1 or not mask[b + 1]
        np.testing.assert_array_equal(rebuilt, mask)


class TestArerExact:
    y = [np.array([0, 0, 1, 1, 0]), np.array([1, 0, 0, 0, 0])]
    model = EnsembleModel.zeros(1, 0)

    def test_always_alarm(self):
        assert arer_exact(self.model, None, self.y, [np.ones(5), np.ones(5)]) == 1.0

    def test_never_alarm(self):
        assert arer_exact(self.model, None, self.y, [np.zeros(5), np.zeros(5)]) == 1.0

    def test_perfect(self):
        assert arer_exact(self.model, None, self.y, [v.astype(float) for v in self.y]) == 0.0

    def test_costs(self):
        m = EnsembleModel.zeros(1, 0, cost_false_alarm=2.0, cost_false_silence=3.0)
        assert arer_exact(m, None, self.y, [np.ones(5)] * 2) == 2.0
        assert arer_exact(m, None, self.y, [np.zeros(5)] * 2) == 3.0

    def test_excludes_degenerate_path(self):
        with pytest.warns(RuntimeWarning, match="excluded"):
            v = arer_exact(self.model, None, self.y + [np.zeros(5)], [np.ones(5)] * 3)
        assert v == 1.0
        with pytest.raises(ValueError):
            with pytest.warns(RuntimeWarning):
                arer_exact(self.model, None, [np.zeros(5)], [np.ones(5)])

    @given(st.integers(0, 10_000))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        y = [(rng.random(30) < 0.3).astype(int) | np.eye(30, dtype=int)[0] for _ in range(3)]
        y = [np.where(np.arange(30) == 29, 0, v) for v in y]
        v = arer_exact(self.model, None, y, [rng.random(30) for _ in range(3)])
        assert 0.0 <= v <= 2.0


class TestSurrogate:
    def test_at_threshold(self):
        y = [np.array([0, 1, 1, 0, 0])]
        # zero model gives a_t = 0.5 = h_A
        v = arer_surrogate(EnsembleModel.zeros(2, 1, cost_false_alarm=1.0, cost_false_silence=3.0), [np.ones((2, 5))], y)
        assert v == pytest.approx(2.0)

    def test_sharpness_converges_to_exact(self):
        model, signals, labels = gradient_fixture(3)
        exact = arer_exact(model, signals, labels)
        gaps = [abs(arer_surrogate(model, signals, labels, sharpness=s) - exact) for s in (1, 10, 100, 10_000)]
        # at s = 1 errors of opposite sign may partly cancel, so only the sharp end is ordered
        assert gaps[1] > gaps[2] > gaps[3]
        assert gaps[3] < 1e-2

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        model, signals, labels = gradient_fixture(seed)
        g_w, g_b = surrogate_gradient(model, signals, labels)
        f_w, f_b = finite_difference(model, signals, labels)
        assert relative_error(np.append(g_w, g_b), np.append(f_w, f_b)) < 1e-5


def separable(seed, n=6, length=300):
    rng = np.random.default_rng(seed)
    signals, labels = [], []
    for _ in range(n):
        y = np.zeros(length, dtype=int)
        a = rng.integers(50, 200)
        y[a : a + rng.integers(5, 60)] = 1
        s = rng.random((3, length))
        s[1] = y
        signals.append(s)
        labels.append(y)
    return signals, labels


class TestTrain:
    def test_separable_fixture(self):
        sig, lab = separable(0)
        model, history = train(sig, lab, TrainOptions(lags=1))
        test_sig, test_lab = separable(1)
        assert arer_exact(model, test_sig, test_lab) < 0.05
        assert history[-1] < history[0]

    def test_loss_non_increasing(self):
        sig, lab = separable(2)
        _, history = train(sig, lab, TrainOptions(epochs=60))
        assert len(history) == 61
        assert np.all(np.diff(history) <= 0)

    def test_symmetric_no_signal_stays_zero(self):
        # identical signals on normal and abnormal samples carry no information
        y = np.array([0, 1] * 50)
        sig = [np.zeros((3, 100))]
        model, _ = train(sig, [y], TrainOptions(epochs=20))
        np.testing.assert_allclose(model.weights, 0.0, atol=1e-12)
        assert abs(model.bias) < 1e-12

    def test_deterministic(self):
        sig, lab = separable(4)
        m1, h1 = train(sig, lab, TrainOptions(epochs=30))
        m2, h2 = train(sig, lab, TrainOptions(epochs=30))
        np.testing.assert_array_equal(m1.weights, m2.weights)
        assert m1.bias == m2.bias and h1 == h2

    def test_non_finite_loss(self):
        sig, lab = separable(5)
        sig[0] = sig[0].copy()
        sig[0][0, 3] = np.nan
        with pytest.raises(NonFiniteLossError, match="weights"):
            train(sig, lab, TrainOptions(epochs=3))


class TestPersistence:
    def test_roundtrip_exact(self, tmp_path, rng):
        bank = DetectorBank(thresholds=rng.random(5) + 0.1)
        model = EnsembleModel(weights=rng.normal(size=(5, 3)), bias=-0.123456789, threshold=0.37, cost_false_alarm=2.5, bank=bank)
        save_model(model, tmp_path / "m.txt", extra=[("note", "x")])
        back = load_model(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.weights, model.weights)
        assert (back.bias, back.threshold, back.cost_false_alarm) == (model.bias, 0.37, 2.5)
        np.testing.assert_array_equal(back.bank.thresholds, bank.thresholds)
        assert back.bank.params == bank.params and back.bank.kinds == bank.kinds

    def test_write_is_stable(self, tmp_path, rng):
        model = EnsembleModel(weights=rng.normal(size=(2, 2)))
        save_model(model, tmp_path / "a.txt")
        save_model(load_model(tmp_path / "a.txt"), tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_bad_schema(self, tmp_path):
        (tmp_path / "m.txt").write_text("schema=other\n")
        with pytest.raises(DataFormatError, match="schema"):
            load_model(tmp_path / "m.txt")

    def test_missing_key(self, tmp_path):
        (tmp_path / "m.txt").write_text("schema=lrdcpd-ensemble/1\nn_detectors=1\nlags=0\n")
        with pytest.raises(DataFormatError, match="missing key"):
            load_model(tmp_path / "m.txt")
