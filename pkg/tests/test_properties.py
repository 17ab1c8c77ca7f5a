"""Randomized properties (hypothesis) of the stats, kernel, prior and field helpers."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steinflow.config import parse_override
from steinflow.fem import build_mesh, read_field, write_field
from steinflow.kernels import HilbertScaleNorm, median_bandwidth, pairwise_sq, rbf
from steinflow.prior import build_prior
from steinflow.stats import covariance_function, variance_function

finite = st.floats(-1e3, 1e3, allow_nan=False)
ensembles = st.integers(2, 12).flatmap(
    lambda m: st.integers(1, 8).flatmap(lambda n: arrays(float, (m, n), elements=finite)))

MESH = build_mesh(4)
PRIOR = build_prior(MESH, 0.5)


class TestStatsProperties:
    @given(ensembles, st.randoms(use_true_random=False))
    def test_permutation_invariance(self, x, rnd):
        order = list(range(len(x)))
        rnd.shuffle(order)
        np.testing.assert_allclose(variance_function(x[order]), variance_function(x),
                                   rtol=1e-9, atol=1e-9)

    @given(ensembles, finite)
    def test_shift_invariance(self, x, c):
        scale = 1 + np.abs(x).max() ** 2
        np.testing.assert_allclose(variance_function(x + c), variance_function(x),
                                   rtol=1e-9, atol=1e-12 * scale)
        np.testing.assert_allclose(covariance_function(x + c, 0), covariance_function(x, 0),
                                   rtol=1e-9, atol=1e-12 * scale)

    @given(ensembles)
    def test_nonnegative_and_cauchy_schwarz(self, x):
        v = variance_function(x)
        assert np.all(v >= 0)
        m = len(x)
        for k in range(x.shape[1]):
            c = covariance_function(x, k)
            bound = np.sqrt(v[: len(c)] * v[k:]) * m / (m - 1)
            assert np.all(np.abs(c) <= bound * (1 + 1e-9) + 1e-9)


class TestKernelProperties:
    @given(arrays(float, (2, MESH.n), elements=st.floats(-5, 5)), st.floats(1e-2, 1e2),
           st.sampled_from([0.0, 0.25, 0.5]))
    def test_rbf_symmetric_and_bounded(self, uv, h, t):
        norm = HilbertScaleNorm(PRIOR, t)
        k = rbf(uv[0], uv[1], h, norm)
        assert 0.0 <= k <= 1.0
        assert k == rbf(uv[1], uv[0], h, norm)
        assert rbf(uv[0], uv[0], h, norm) == 1.0

    @given(st.integers(2, 10).flatmap(lambda m: arrays(float, (m, 3), elements=st.floats(-10, 10))))
    def test_pairwise_and_bandwidth(self, y):
        sq = pairwise_sq(y)
        assert np.all(np.diag(sq) == 0) and np.all(sq >= 0)
        np.testing.assert_array_equal(sq, sq.T)
        h = median_bandwidth(sq[np.triu_indices(len(y), 1)], len(y))
        assert h > 0 and np.isfinite(h)


class TestPriorProperties:
    @given(arrays(float, MESH.n, elements=st.floats(-10, 10)), st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=50)
    def test_power_composition(self, u, a, b):
        lhs = PRIOR.apply_power(a, PRIOR.apply_power(b, u))
        rhs = PRIOR.apply_power(a + b, u)
        scale = np.abs(PRIOR.eigvals).max() ** (4 * (abs(a) + abs(b))) * (1 + np.abs(u).max())
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * scale)


class TestRoundTrips:
    @given(arrays(float, MESH.n, elements=st.floats(allow_nan=False, allow_infinity=False)))
    @settings(max_examples=25)
    def test_field_file(self, tmp_path_factory, u):
        path = tmp_path_factory.mktemp("f") / "u.sfld"
        write_field(path, u, MESH.ng)
        back, ng = read_field(path)
        assert ng == MESH.ng
        np.testing.assert_array_equal(back, u)

    @given(st.sampled_from(["mesh", "svgd", "pcn"]), st.sampled_from(["ng", "m", "seed"]),
           st.integers(-10**6, 10**6))
    def test_override(self, sec, key, val):
        assert parse_override(f"{sec}.{key}={val}") == {sec: {key: val}}
