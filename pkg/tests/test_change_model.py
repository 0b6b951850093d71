import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from lrdcpd.change_model import (
    PERIOD,
    ChangeSpec,
    DataFormatError,
    LabeledDataset,
    LabeledPath,
    TimeSeries,
    change_labels,
    compute_residuals,
    generate_artificial,
    generate_path,
    inject_change,
    path_seeds,
    read_dataset,
    read_series_csv,
    write_dataset,
    write_series_csv,
)
from lrdcpd.trend_filter import extract_trend


class TestTimeSeries:
    def test_from_values(self):
        s = TimeSeries.from_values([1.0, 2.0, 3.0], start=10.0, sample_period=5.0)
        np.testing.assert_array_equal(s.times, [10.0, 15.0, 20.0])
        assert len(s) == 3

    def test_rejects_nonuniform(self):
        with pytest.raises(ValueError):
            TimeSeries(np.array([0.0, 1.0, 3.0]), np.zeros(3))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            TimeSeries.from_values([0.0, np.nan])


class TestChangeSpec:
    @pytest.mark.parametrize("kw", [{"duration": 0.0}, {"duration": 5.0, "sigma": 0.0}, {"duration": 5.0, "hurst": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChangeSpec(change_time=1.0, magnitude=1.0, **kw)


class TestInjectChange:
    def zero(self, n=50):
        return TimeSeries.from_values(np.zeros(n))

    def test_closed_interval(self):
        path = inject_change(self.zero(), ChangeSpec(10.0, 10.0, 5.0))
        assert path.labels.sum() == 11
        assert path.true_segment() == (10, 20)

    def test_indicator_values(self):
        path = inject_change(self.zero(), ChangeSpec(10.0, 10.0, 5.0))
        np.testing.assert_array_equal(path.series.values, 5.0 * path.labels)

    def test_zero_magnitude_keeps_values(self, rng):
        base = TimeSeries.from_values(rng.standard_normal(50))
        path = inject_change(base, ChangeSpec(3.5, 7.0, 0.0))
        np.testing.assert_array_equal(path.series.values, base.values)
        assert path.labels.sum() == 7

    def test_out_of_span(self):
        with pytest.raises(ValueError, match="outside"):
            inject_change(self.zero(), ChangeSpec(45.0, 10.0, 1.0))

    @given(st.floats(0, 80), st.floats(0.1, 19))
    def test_label_bookkeeping(self, theta, dt):
        path = inject_change(self.zero(100), ChangeSpec(theta, dt, 2.0))
        assert path.normal_duration + path.abnormal_duration == 100
        expected = np.floor(theta + dt) - np.ceil(theta) + 1
        assert path.abnormal_duration == expected

    def test_labeled_path_validation(self):
        with pytest.raises(ValueError):
            LabeledPath(self.zero(5), np.zeros(4))
        with pytest.raises(ValueError):
            LabeledPath(self.zero(3), np.array([0, 2, 0]))


class TestGenerate:
    def test_easy_single(self):
        ds = generate_artificial("easy", 1, seed=1)
        path = ds[0]
        assert len(path.series) == 2016
        assert 5 <= path.labels.sum() <= 101
        assert path.normal_duration + path.abnormal_duration == 2016
        a, b = path.true_segment()
        assert PERIOD <= a and b <= 6 * PERIOD + 101

    def test_hard_deterministic(self):
        a = generate_artificial("hard", 3, seed=7)
        b = generate_artificial("hard", 3, seed=7)
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.series.values, q.series.values)
            np.testing.assert_array_equal(p.labels, q.labels)
            np.testing.assert_array_equal(p.history.values, q.history.values)

    def test_prefix_stable(self):
        # path i does not depend on the dataset size
        np.testing.assert_array_equal(
            generate_artificial("easy", 1, 3)[0].series.values, generate_artificial("easy", 2, 3)[0].series.values
        )

    def test_profiles_differ_in_magnitude_only(self):
        e = generate_path("easy", 4, 0)
        assert e.change.magnitude == 5.0
        assert generate_path("hard", 4, 0).change.magnitude == 3.0

    def test_zero_magnitude_matches_no_change_model(self):
        base = generate_path("easy", 2, 0, magnitude=0.0)
        assert base.labels.sum() == 0
        shifted = generate_path("easy", 2, 0)
        np.testing.assert_allclose(shifted.series.values - base.series.values, 5.0 * shifted.labels)

    def test_history_precedes_path(self):
        path = generate_path("easy", 0, 0)
        assert path.history.times[-1] == path.series.times[0] - 1
        assert path.history.times.size == 2016

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_artificial("easy", 0, 1)
        with pytest.raises(ValueError):
            generate_artificial("medium", 1, 1)

    @pytest.mark.slow
    def test_change_time_uniform(self):
        # the change-time draw is the first use of each path's parameter stream
        thetas = [path_seeds("hard", 11, i)[1].uniform(PERIOD, 6 * PERIOD) for i in range(10_000)]
        assert generate_path("hard", 11, 0).change.change_time == thetas[0]
        assert stats.kstest(thetas, stats.uniform(PERIOD, 5 * PERIOD).cdf).pvalue > 0.01


class TestResiduals:
    def test_exact_fit_gives_zero(self, rng):
        series = TimeSeries.from_values(np.cumsum(rng.standard_normal(300)))
        est = extract_trend(series)
        r = compute_residuals(series.with_values(est.fitted), est)
        np.testing.assert_array_equal(r.values, 0.0)

    def test_cubic_invariance(self):
        path = generate_path("easy", 5, 0)
        k = path.series.times
        cubic = 0.3 - 2e-3 * k + 1e-6 * k**2 - 2e-10 * k**3
        moved = path.series.with_values(path.series.values + cubic)
        r0 = compute_residuals(path.series, extract_trend(path.series)).values
        r1 = compute_residuals(moved, extract_trend(moved)).values
        np.testing.assert_allclose(r1, r0, atol=1e-6)

    def test_degenerate_scale(self):
        series = TimeSeries.from_values(np.zeros(300))
        with pytest.raises(ValueError, match="degenerate"):
            compute_residuals(series, extract_trend(series))

    def test_misaligned(self, rng):
        est = extract_trend(rng.standard_normal(300))
        with pytest.raises(ValueError):
            compute_residuals(TimeSeries.from_values(np.zeros(299)), est)

    @pytest.mark.slow
    def test_no_change_residual_moments(self):
        ds = generate_artificial("easy", 100, 0, magnitude=0.0)
        for path in ds:
            r = compute_residuals(path.series, extract_trend(path.series)).values
            assert abs(r.mean()) <= 0.1
            assert 0.7 <= r.var() <= 1.3

    @pytest.mark.slow
    def test_change_segment_mean(self):
        ds = generate_artificial("easy", 100, 0)
        means = [
            compute_residuals(p.series, extract_trend(p.series)).values[p.labels == 1].mean() for p in ds
        ]
        assert np.mean(means) > 2


class TestFiles:
    def test_series_roundtrip(self, tmp_path, rng):
        s = TimeSeries.from_values(rng.standard_normal(20), start=100.0, sample_period=300.0)
        labels = (np.arange(20) > 10).astype(int)
        write_series_csv(tmp_path / "a.csv", s, labels)
        s2, l2 = read_series_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(s2.values, s.values)
        np.testing.assert_array_equal(s2.times, s.times)
        assert s2.sample_period == 300.0
        np.testing.assert_array_equal(l2, labels)
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "t,value,label"

    def test_missing_label_column_ok(self, tmp_path):
        (tmp_path / "b.csv").write_text("t,value\n0,1.0\n1,2.0\n")
        s, lab = read_series_csv(tmp_path / "b.csv")
        assert lab is None and len(s) == 2

    @pytest.mark.parametrize(
        "body, match",
        [
            ("t,val\n0,1\n", "missing column 'value'"),
            ("t,value\n0,1\n1,x\n", "row 3"),
            ("t,value\n0,1\n1,2\n1,3\n", "row 4: duplicate"),
            ("t,value\n0,1\n1,2\n3,3\n", "row 4: timestamp gap"),
            ("", "empty"),
        ],
    )
    def test_malformed(self, tmp_path, body, match):
        (tmp_path / "c.csv").write_text(body)
        with pytest.raises(DataFormatError, match=match):
            read_series_csv(tmp_path / "c.csv")

    def test_dataset_roundtrip(self, tmp_path):
        ds = generate_artificial("hard", 2, seed=3)
        write_dataset(ds, tmp_path / "d")
        back = read_dataset(tmp_path / "d")
        assert back.profile == "hard" and back.seed == 3 and len(back) == 2
        for p, q in zip(ds, back):
            np.testing.assert_array_equal(p.series.values, q.series.values)
            np.testing.assert_array_equal(p.labels, q.labels)
            np.testing.assert_array_equal(p.history.values, q.history.values)
            np.testing.assert_allclose(p.trend, q.trend, atol=1e-12)

    def test_dataset_bad_manifest(self, tmp_path):
        ds = generate_artificial("easy", 1, seed=3)
        manifest = write_dataset(ds, tmp_path)
        manifest.write_text(manifest.read_text().replace("lrdcpd-dataset/1", "other"))
        with pytest.raises(DataFormatError, match="schema"):
            read_dataset(tmp_path)

    def test_dataset_requires_paths(self):
        with pytest.raises(ValueError):
            LabeledDataset(paths=[])

    def test_change_labels_closed(self):
        np.testing.assert_array_equal(change_labels(np.arange(5.0), 1.0, 3.0), [0, 1, 1, 1, 0])
