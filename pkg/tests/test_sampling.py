import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from conftest import numeric_grad
from isgd import nn, sampling
from isgd.errors import DegenerateDistributionError, EmptyDatasetError, ShapeError, ZeroProbabilityError

scores_st = arrays(np.float64, st.integers(2, 30), elements=st.floats(0.0, 100.0))


class TestPool:
    def test_covers_everything_when_large(self, rng):
        pool = sampling.presample_pool(7, 20, rng)
        np.testing.assert_array_equal(np.sort(pool), np.arange(7))

    def test_distinct(self, rng):
        pool = sampling.presample_pool(100, 64, rng)
        assert np.unique(pool).size == 64

    def test_single_index_is_uniform(self, rng):
        n = 10
        draws = np.array([sampling.presample_pool(n, 1, rng)[0] for _ in range(100_000)])
        counts = np.bincount(draws, minlength=n)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_deterministic(self):
        a = sampling.presample_pool(50, 10, np.random.default_rng(3))
        b = sampling.presample_pool(50, 10, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_empty_dataset(self, rng):
        with pytest.raises(EmptyDatasetError):
            sampling.presample_pool(0, 4, rng)


class TestDistribution:
    def test_proportional(self):
        d = sampling.build_distribution(np.arange(4), [1, 2, 3, 4])
        np.testing.assert_allclose(d.probs, [0.1, 0.2, 0.3, 0.4], rtol=1e-15)

    def test_zero_scores_smoothed(self):
        d = sampling.build_distribution(np.arange(3), [0, 0, 0], 1.0)
        np.testing.assert_allclose(d.probs, [1 / 3] * 3, rtol=1e-15)

    def test_adaptive_rule(self):
        scores = np.array([2.0, 4.0, 6.0])
        c = sampling.adaptive_smoothing_constant(scores.mean())
        assert c == 2.0
        d = sampling.build_distribution(np.arange(3), scores, c)
        np.testing.assert_allclose(d.probs, [4 / 18, 6 / 18, 8 / 18], rtol=1e-15)

    def test_all_zero_without_smoothing(self):
        with pytest.raises(DegenerateDistributionError):
            sampling.build_distribution(np.arange(3), [0, 0, 0])

    def test_rejects_negative_scores(self):
        with pytest.raises(ValueError):
            sampling.build_distribution(np.arange(2), [1.0, -0.1])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sampling.build_distribution(np.arange(3), [1.0, 2.0])

    @pytest.mark.parametrize("ema,expected", [(4.0, 2.0), (0.0, 0.0), (1.6, 0.8)])
    def test_adaptive_constant(self, ema, expected):
        assert sampling.adaptive_smoothing_constant(ema) == pytest.approx(expected, rel=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(scores_st, st.floats(0.0, 10.0))
    def test_normalized(self, scores, c):
        if scores.sum() + c * scores.size == 0:
            return
        d = sampling.build_distribution(np.arange(scores.size), scores, c)
        assert np.all(d.probs >= 0)
        assert abs(d.probs.sum() - 1.0) < 1e-9
        if c > 0:
            assert np.all(d.probs > 0)

    @settings(max_examples=100, deadline=None)
    @given(scores_st)
    def test_smoothing_moves_toward_uniform(self, scores):
        if scores.sum() == 0:
            return
        n = scores.size
        pool = np.arange(n)
        exact = sampling.build_distribution(pool, scores, 0.0)
        np.testing.assert_allclose(exact.probs, scores / scores.sum(), rtol=1e-12, atol=1e-300)
        tv = [0.5 * np.abs(sampling.build_distribution(pool, scores, c).probs - 1 / n).sum()
              for c in (0.0, 0.1, 1.0, 10.0, 1e3, 1e9)]
        assert all(b <= a + 1e-12 for a, b in zip(tv, tv[1:]))
        assert tv[-1] < 1e-6


class TestWeights:
    def test_uniform_k1_is_one(self):
        d = sampling.build_distribution(np.arange(5), np.full(5, 0.37))
        np.testing.assert_array_equal(sampling.biased_weights(d, np.arange(5), 1.0), 1.0)

    def test_k0(self):
        d = sampling.build_distribution(np.arange(4), [1, 2, 3, 4])
        np.testing.assert_array_equal(sampling.biased_weights(d, np.arange(4), 0.0), 0.25)

    def test_example(self):
        d = sampling.build_distribution(np.arange(4), [1, 2, 3, 4])
        np.testing.assert_allclose(
            sampling.biased_weights(d, np.arange(4), 1.0), [2.5, 1.25, 1 / 1.2, 0.625], rtol=1e-14
        )

    def test_dataset_normalizer(self):
        d = sampling.build_distribution(np.arange(4), [1, 2, 3, 4])
        w_pool = sampling.biased_weights(d, np.arange(4), 0.5)
        w_data = sampling.biased_weights(d, np.arange(4), 0.5, normalizer=40)
        np.testing.assert_allclose(w_data, w_pool / 10, rtol=1e-14)

    def test_zero_probability(self):
        d = sampling.build_distribution(np.arange(3), [0, 1, 2])
        with pytest.raises(ZeroProbabilityError):
            sampling.biased_weights(d, [0], 0.5)

    def test_k_above_one(self):
        with pytest.raises(ValueError):
            sampling.check_bias_exponent(1.5)

    def test_negative_k_warns(self):
        with pytest.warns(UserWarning):
            sampling.check_bias_exponent(-0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sampling.check_bias_exponent(0.5)


class TestSampleBatch:
    def test_point_mass(self, rng):
        d = sampling.build_distribution(np.arange(3), [1, 0, 0])
        np.testing.assert_array_equal(sampling.sample_batch(d, 1000, rng), 0)

    def test_trailing_zero_never_drawn(self, rng):
        d = sampling.build_distribution(np.arange(3), [0, 1, 0])
        np.testing.assert_array_equal(sampling.sample_batch(d, 1000, rng), 1)

    def test_frequencies_within_3_sigma(self, rng):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        d = sampling.build_distribution(np.arange(4), p)
        n = 100_000
        counts = np.bincount(sampling.sample_batch(d, n, rng), minlength=4)
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 3 * sigma)

    def test_deterministic(self):
        d = sampling.build_distribution(np.arange(4), [1, 2, 3, 4])
        a = sampling.sample_batch(d, 50, np.random.default_rng(9))
        b = sampling.sample_batch(d, 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_inverse_cdf_matches_linear_scan(self, rng):
        from isgd._backend import kernels

        cdf = np.cumsum(rng.random(17))
        targets = rng.random(500) * cdf[-1]
        expected = [next(i for i, c in enumerate(cdf) if c > t) for t in targets]
        np.testing.assert_array_equal(kernels.inverse_cdf(cdf, targets), expected)


def enumerated_expectation(probs, alpha, grads):
    return (probs * alpha) @ grads


class TestEstimator:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 16), st.integers(0, 2**32 - 1))
    def test_unbiased_at_k1(self, n, seed):
        r = np.random.default_rng(seed)
        scores = r.random(n) + 1e-3
        grads = r.normal(size=(n, 5))
        d = sampling.build_distribution(np.arange(n), scores)
        alpha = sampling.biased_weights(d, np.arange(n), 1.0)
        expected = grads.mean(axis=0)
        got = enumerated_expectation(d.probs, alpha, grads)
        assert np.linalg.norm(got - expected) <= 1e-12 * np.linalg.norm(expected)

    @pytest.mark.parametrize("k", [0.0, 0.5, 1.0])
    def test_soft_max_loss_direction(self, rng, k):
        X = rng.normal(size=(8, 2))
        y = rng.integers(0, 2, size=8)
        sizes = (2, 6, 2)
        params = nn.init_mlp(sizes, rng)
        theta = params.to_vector()
        per = nn.per_sample_grads(params, X, y, "nll")
        losses = nn.per_sample_losses(params, X, y, "nll")
        d = sampling.build_distribution(np.arange(8), losses)
        alpha = sampling.biased_weights(d, np.arange(8), k)
        update = enumerated_expectation(d.probs, alpha, per)

        def powered(v):
            L = nn.per_sample_losses(params.replace_vector(v), X, y, "nll")
            return np.mean(L ** (2.0 - k))

        fd = numeric_grad(powered, theta)
        cos = update @ fd / (np.linalg.norm(update) * np.linalg.norm(fd))
        assert cos >= 1 - 1e-8
        # gradient of the powered mean is (2 - k)/n * sum L^{1-k} grad L
        analytic = (losses ** (1 - k)) @ per / 8 * (2 - k)
        big = np.abs(analytic) > 1e-6 * np.abs(analytic).max()
        ratio = update[big] / analytic[big]
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-8)
