import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalload import data as D
from globalload.errors import (
    DegenerateWindow,
    InsufficientDataError,
    NormalizationError,
    ZeroActualError,
)
from globalload.metrics import (
    evaluate,
    improvement,
    mape,
    mase,
    naive_seasonal,
    naive_windows,
    nmae,
    window_scores,
)


@pytest.fixture(scope="module")
def pool():
    sset = D.generate_synthetic(11, 2, 4)
    parts = [
        D.make_windows(s, 336, 48, stride=48, series_index=i, target_range=(2 * 336, sset.T))
        for i, s in enumerate(sset.series)
    ]
    return sset, D.stack(parts)


class TestNaive:
    def test_weekly_periodic_is_exact(self):
        week = np.random.default_rng(0).uniform(1, 2, 336)
        values = np.tile(week, 3)
        np.testing.assert_array_equal(naive_seasonal(values, 700, 48), values[700:748])

    def test_short_season(self):
        assert naive_seasonal([1.0, 2.0, 3.0], 3, 1, S=1).tolist() == [3.0]

    def test_insufficient_history(self):
        with pytest.raises(InsufficientDataError):
            naive_seasonal(np.ones(400), 335, 48)


class TestMase:
    def test_hand_case(self):
        assert mase([10, 12], [9, 13], [8, 8], S=2) == pytest.approx(1 / 3, rel=1e-15)

    def test_naive_and_perfect(self):
        rng = np.random.default_rng(1)
        hist, actual = rng.uniform(1, 2, 336), rng.uniform(1, 2, 48)
        assert mase(actual, hist[:48], hist) == 1.0
        assert mase(actual, actual, hist) == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateWindow):
            mase([5.0, 5.0], [4.0, 4.0], [5.0, 5.0], S=2)

    @given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
    def test_scale_invariant(self, c, seed):
        rng = np.random.default_rng(seed)
        hist, actual, fc = rng.uniform(1, 2, 6), rng.uniform(1, 2, 3), rng.uniform(1, 2, 3)
        base = mase(actual, fc, hist, S=3)
        assert mase(c * actual, c * fc, c * hist, S=3) == pytest.approx(base, rel=1e-12)


class TestMapeNmae:
    def test_mape_cases(self):
        assert mape([3.0, 4.0], [3.0, 4.0]) == 0.0
        assert mape([100.0], [90.0]) == 10.0
        assert mape([50.0, 200.0], [55.0, 180.0]) == 10.0

    def test_mape_zero_actual(self):
        with pytest.raises(ZeroActualError):
            mape([0.0, 1.0], [1.0, 1.0])

    def test_nmae_cases(self):
        assert nmae([4.0, 6.0], [4.0, 6.0]) == 0.0
        assert nmae([10.0, 10.0], [9.0, 11.0]) == 0.1
        assert nmae([70.0, 70.0], [63.0, 77.0]) == pytest.approx(0.1, rel=1e-15)

    def test_nmae_nonpositive(self):
        with pytest.raises(NormalizationError):
            nmae([-1.0, 1.0], [0.0, 0.0])

    @given(st.integers(0, 10_000))
    def test_zero_iff_perfect(self, seed):
        rng = np.random.default_rng(seed)
        a, n = rng.uniform(1, 2, (3, 4)), rng.uniform(1, 2, (3, 4))
        f = a.copy()
        f[0, 1] += 0.1
        m, p, e, _, _ = window_scores(a, f, n)
        assert m[0] > 0 and p[0] > 0 and e[0] > 0
        assert np.all(m[1:] == 0) and np.all(p[1:] == 0) and np.all(e[1:] == 0)


class TestEvaluate:
    def test_naive_scores_one(self, pool):
        sset, d = pool
        res = evaluate(naive_windows(d, sset), d, sset)
        assert res.overall["mase"] == 1.0
        assert np.all(res.per_series["mase"] == 1.0)
        assert set(res.group_means["group"]) == {"Single", "sTS", "mTS", "lTS", "All"}
        assert len(res.per_horizon) == 5 * 48

    def test_perfect_scores_zero(self, pool):
        sset, d = pool
        res = evaluate(d.y, d, sset)
        assert res.overall == {"mase": 0.0, "mape": 0.0, "nmae": 0.0}

    def test_overall_is_unweighted_mean_of_series(self, pool):
        sset, d = pool
        keep = np.ones(d.m, bool)
        keep[np.nonzero(d.sample_series_index == 0)[0][1:]] = False  # series 0 keeps one window
        sub = d.take(keep)
        fc = sub.y * 1.1
        res = evaluate(fc, sub, sset)
        assert res.per_series["n_windows"].iloc[0] == 1
        assert res.overall["mase"] == pytest.approx(res.per_series["mase"].mean(), rel=1e-15)

    def test_two_series_mean(self, pool):
        sset, d = pool
        sub = d.restrict([0, 1])
        naive = naive_windows(sub, sset)
        w = np.where(sub.sample_series_index[:, None] == 0, 0.6, 0.8)
        fc = sub.y + w * (naive - sub.y)  # scales every window's error by w
        assert evaluate(fc, sub, sset).overall["mase"] == pytest.approx(0.7, rel=1e-12)

    def test_degenerate_windows_counted(self):
        T = 3 * 336
        flat = D.Series("flat", D.AggregateType.SINGLE, D.SYNTHETIC_START, np.ones(T))
        sset = D.SeriesSet([flat])
        d = D.make_windows(flat, 336, 48, stride=48, target_range=(2 * 336, T))
        res = evaluate(d.y + 1.0, d, sset)
        assert res.n_degenerate == d.m
        assert np.isnan(res.overall["mase"])

    def test_improvement(self, pool):
        sset, d = pool
        a = evaluate(naive_windows(d, sset), d, sset)
        b = evaluate(d.y, d, sset)
        imp = improvement(a, b)
        assert np.all(imp["improvement"] == 100.0)
        assert list(imp["id"]) == sset.ids

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.01, 100.0))
    def test_evaluate_scale_invariant(self, c):
        sset = D.generate_synthetic(4, 1, 3)
        scaled = sset.scaled(np.full(sset.N, c))
        parts = [D.make_windows(s, 336, 48, 48, i, (336, sset.T)) for i, s in enumerate(sset.series)]
        parts_c = [D.make_windows(s, 336, 48, 48, i, (336, sset.T)) for i, s in enumerate(scaled.series)]
        d, dc = D.stack(parts), D.stack(parts_c)
        fc = d.y * 0.9 + 0.05
        a = evaluate(fc, d, sset).overall
        b = evaluate(fc * (dc.y[0, 0] / d.y[0, 0]), dc, scaled).overall
        for k in a:
            assert b[k] == pytest.approx(a[k], rel=1e-9)
