import numpy as np
import pytest

from steinflow.stats import (
    StatsSummary,
    StreamingMoments,
    covariance_function,
    discrepancy_table,
    l2_discrepancy,
    mean_function,
    variance_function,
)


def two_pass_variance(x):
    out = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        mu = sum(x[:, j]) / len(x)
        out[j] = sum((v - mu) ** 2 for v in x[:, j]) / len(x)
    return out


class TestVariance:
    def test_identical_samples(self):
        x = np.tile(np.arange(5.0), (4, 1))
        np.testing.assert_array_equal(variance_function(x), 0.0)
        np.testing.assert_array_equal(mean_function(x), np.arange(5.0))

    def test_plus_minus(self):
        c = 1.7
        x = np.array([[c, 0.0], [-c, 0.0]])
        np.testing.assert_allclose(variance_function(x), [c * c, 0.0], rtol=1e-15)

    def test_two_pass_oracle(self, rng):
        x = rng.normal(3.0, 2.0, size=(37, 11))
        np.testing.assert_allclose(variance_function(x), two_pass_variance(x), rtol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            variance_function(np.ones((1, 4)))

    def test_permutation_and_shift(self, rng):
        x = rng.normal(size=(20, 9))
        v = variance_function(x)
        np.testing.assert_allclose(variance_function(x[rng.permutation(20)]), v, rtol=1e-12)
        shift = rng.normal(size=9)
        np.testing.assert_allclose(variance_function(x + shift), v, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(covariance_function(x + shift, 2),
                                   covariance_function(x, 2), rtol=1e-12, atol=1e-12)


class TestCovariance:
    def test_lag_zero_normalization(self, rng):
        x = rng.normal(size=(13, 6))
        np.testing.assert_allclose(covariance_function(x, 0), variance_function(x) * 13 / 12, rtol=1e-13)

    def test_independent_flips(self):
        rng = np.random.default_rng(7)
        m = 20000
        x = np.zeros((m, 10))
        x[:, 0] = rng.choice([-1.0, 1.0], m)
        x[:, 9] = rng.choice([-1.0, 1.0], m)
        cov = covariance_function(x, 9)
        assert cov.shape == (1,)
        assert abs(cov[0]) <= 3 / np.sqrt(m)

    def test_perfectly_correlated(self, rng):
        a = rng.normal(size=50)
        x = np.column_stack([a, np.zeros(50), 3 * a])
        cov = covariance_function(x, 2)[0]
        var = variance_function(x)
        assert cov == pytest.approx(np.sqrt(var[0] * var[2]) * 50 / 49, rel=1e-12)

    def test_lags_match_dense_covariance(self, rng):
        x = rng.normal(size=(30, 8)) @ rng.normal(size=(8, 8))
        dense = np.cov(x, rowvar=False)
        for k in range(8):
            np.testing.assert_allclose(covariance_function(x, k), np.diagonal(dense, k), rtol=1e-12)

    @pytest.mark.parametrize("lag", [-1, 8, 1.5])
    def test_bad_lag(self, rng, lag):
        with pytest.raises(ValueError):
            covariance_function(rng.normal(size=(4, 8)), lag)


class TestDiscrepancy:
    def test_basic(self, rng):
        a = rng.normal(size=7)
        assert l2_discrepancy(a, a) == 0.0
        assert l2_discrepancy(a, a + np.eye(7)[3]) == pytest.approx(1.0)
        b = rng.normal(size=7)
        assert l2_discrepancy(a, b) == l2_discrepancy(b, a)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            l2_discrepancy(np.zeros(3), np.zeros(4))

    def test_table(self, rng):
        s = StatsSummary.from_samples(rng.normal(size=(10, 5)), lags=(1, 2))
        r = StatsSummary.from_samples(rng.normal(size=(10, 5)), lags=(2, 3))
        rows = discrepancy_table(s, r)
        assert [row[:2] for row in rows] == [("variance", ""), ("covariance", 2)]
        assert rows[1][2] == pytest.approx(l2_discrepancy(s.covariance[2], r.covariance[2]))


class TestStreaming:
    def test_matches_batch(self, rng):
        x = rng.normal(5.0, 1e-3, size=(400, 6))
        acc = StreamingMoments(6)
        for row in x:
            acc.push(row)
        np.testing.assert_allclose(acc.mean, x.mean(axis=0), rtol=1e-14)
        np.testing.assert_allclose(acc.variance, x.var(axis=0), rtol=1e-8)

    def test_empty(self):
        assert np.isnan(StreamingMoments(3).variance).all()
