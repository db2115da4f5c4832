import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isgd import analysis
from isgd.errors import ShapeError
from isgd.trainer import MetricsRecord

finite = st.floats(-100, 100, allow_nan=False)


class TestTracking:
    def test_identity(self):
        fit = analysis.tracking_coefficients([1.0, 2.0, 5.0], [1.0, 2.0, 5.0])
        assert fit.a == pytest.approx(1.0, rel=1e-14)
        assert fit.b == pytest.approx(0.0, abs=1e-14)
        assert fit.n == 3

    def test_inverse_affine(self, rng):
        actual = rng.random(20)
        fit = analysis.tracking_coefficients(2 * actual + 3, actual)
        assert fit.a == pytest.approx(0.5, rel=1e-12)
        assert fit.b == pytest.approx(-1.5, rel=1e-12)

    def test_constant_predictor(self):
        fit = analysis.tracking_coefficients([0.3, 0.3, 0.3], [1.0, 2.0, 6.0])
        assert fit.a == 0.0 and fit.b == 3.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            analysis.tracking_coefficients([1.0, 2.0], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite))
    def test_local_optimality(self, x, y):
        fit = analysis.tracking_coefficients(x, y)

        def sse(a, b):
            return float(np.sum((a * x + b - y) ** 2))

        best = sse(fit.a, fit.b)
        for da in (-1e-3, 0.0, 1e-3):
            for db in (-1e-3, 0.0, 1e-3):
                assert sse(fit.a + da, fit.b + db) >= best - 1e-9 * max(1.0, best)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 10, elements=finite), arrays(np.float64, 10, elements=finite))
    def test_residual_mean_zero(self, x, y):
        fit = analysis.tracking_coefficients(x, y)
        resid = fit.a * x + fit.b - y
        assert abs(resid.mean()) < 1e-9 * max(1.0, np.abs(y).max(), abs(fit.a) * np.abs(x).max())


class TestSpearman:
    def test_identical(self, rng):
        v = rng.random(50)
        assert analysis.spearman(v, v) == 1.0

    def test_reversed(self, rng):
        v = rng.random(50)
        assert analysis.spearman(v, -v) == -1.0

    def test_ties_use_average_ranks(self):
        from scipy.stats import spearmanr

        x = [1, 2, 2, 3, 4, 4, 4]
        y = [2, 1, 3, 3, 5, 4, 6]
        assert analysis.spearman(x, y) == pytest.approx(spearmanr(x, y).statistic, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.int64, 30, elements=st.integers(1, 1000)), st.integers(0, 2**32 - 1))
    def test_monotone_invariance(self, xi, seed):
        # integer grid so the transforms stay strictly monotone in floating point
        x = xi / 100.0
        y = np.random.default_rng(seed).random(30)
        base = analysis.spearman(x, y)
        assert analysis.spearman(np.log(x), y) == pytest.approx(base, abs=1e-12)
        assert analysis.spearman(x, np.exp(3 * y) + 7) == pytest.approx(base, abs=1e-12)


class TestOrdering:
    def test_equal_vectors(self, rng):
        v = rng.random(120) + 0.1
        d = analysis.loss_gnorm_ordering(v, v)
        assert d.spearman == 1.0
        np.testing.assert_array_equal(d.sorted_losses, np.sort(v))
        assert d.moving_avg.shape == (71,) and d.moving_std.shape == (71,)

    def test_reversed(self, rng):
        v = rng.random(80) + 0.1
        assert analysis.loss_gnorm_ordering(v, 1 / v).spearman == -1.0

    def test_short_input_gives_empty_moving_arrays(self):
        d = analysis.loss_gnorm_ordering([1.0, 2.0], [1.0, 2.0])
        assert d.moving_avg.size == 0

    def test_mse_output_gradient_ordering(self, rng):
        # output-layer gradient norm of the squared error is 2 sqrt(L)
        psi = rng.normal(size=(500, 3))
        y = rng.normal(size=(500, 3))
        losses = np.sum((psi - y) ** 2, axis=1)
        gnorms = np.linalg.norm(2 * (psi - y), axis=1)
        assert analysis.loss_gnorm_ordering(losses, gnorms).spearman == 1.0

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            analysis.loss_gnorm_ordering([1.0, 2.0], [1.0])


def make_log(losses, var=None):
    var = var if var is not None else [0.0] * len(losses)
    return [MetricsRecord(i, 0.0, None, float(l), float(l), float(v)) for i, (l, v) in enumerate(zip(losses, var))]


class TestReport:
    def test_single_log_window_one(self):
        log = make_log([3.0, 2.0, 1.0])
        report = analysis.variance_report({"u": [log]}, window=1)
        row = report.rows[0]
        assert row.loss_mean == 1.0 and row.loss_std == 0.0
        np.testing.assert_array_equal(report.series["u"]["loss_mean"], [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(report.series["u"]["loss_std"], 0.0)

    def test_identical_logs_identical_rows(self, rng):
        log = make_log(rng.random(40), rng.random(40))
        report = analysis.variance_report({"a": [log], "b": [log]}, window=5)
        a, b = report.rows
        assert (a.loss_mean, a.loss_std, a.var_trace_mean) == (b.loss_mean, b.loss_std, b.var_trace_mean)

    def test_threshold_matches_linear_scan(self, rng):
        losses = np.sort(rng.random(100))[::-1] + 0.05 * rng.random(100)
        window, thr = 5, 0.4
        report = analysis.variance_report({"x": [make_log(losses)]}, window=window, threshold=thr)
        first = None
        for end in range(window, len(losses) + 1):
            if np.mean(losses[end - window:end]) <= thr:
                first = end - 1
                break
        assert report.rows[0].iters_to_threshold_median == first

    def test_empty(self):
        with pytest.raises(ValueError):
            analysis.variance_report({})

    def test_first_crossing(self):
        assert analysis.first_crossing(np.arange(5), [5, 4, 3, 2, 1], 3) == 2
        assert analysis.first_crossing(np.arange(3), [5, 4, 3.5], 3) is None
