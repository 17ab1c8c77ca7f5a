"""Spectral Gaussian prior: eigensystem, powers of C0, norms and sampling."""
import numpy as np
import pytest

from steinflow.fem import build_mesh
from steinflow.prior import build_prior


@pytest.fixture(scope="module")
def prior32():
    return build_prior(build_mesh(32), 0.5)


class TestEigensystem:
    def test_sorted_and_bounded_below(self, prior8):
        lam = prior8.eigvals
        assert np.all(np.diff(lam) >= 0)
        assert lam.min() >= prior8.alpha * (1 - 1e-10)

    def test_m_orthonormal(self, prior8):
        V = prior8.eigvecs
        np.testing.assert_allclose(V.T @ (prior8.mass @ V), np.eye(prior8.n), atol=1e-8)

    def test_continuum_spectrum(self, prior32):
        alpha = prior32.alpha
        assert prior32.eigvals[0] == pytest.approx(alpha, rel=1e-2)
        assert prior32.eigvals[1] == pytest.approx(alpha * (1 + np.pi**2), rel=2e-2)

    def test_sign_convention(self, prior8):
        V = prior8.eigvecs
        lead = np.argmax(np.abs(V) > 1e-8 * np.abs(V).max(axis=0), axis=0)
        assert np.all(V[lead, np.arange(V.shape[1])] > 0)

    def test_rejects_nonpositive_alpha(self, mesh8):
        with pytest.raises(ValueError):
            build_prior(mesh8, 0.0)


class TestPowers:
    def test_identity_power(self, prior8, rng):
        u = rng.standard_normal(prior8.n)
        np.testing.assert_allclose(prior8.apply_power(0.0, u), u, atol=1e-10)

    def test_semigroup(self, prior8, rng):
        u = rng.standard_normal(prior8.n)
        twice = prior8.apply_power(0.5, prior8.apply_power(0.5, u))
        np.testing.assert_allclose(twice, prior8.apply_power(1.0, u), rtol=1e-8, atol=1e-12)

    def test_eigen_relation(self, prior8):
        v0 = prior8.eigvecs[:, 0]
        np.testing.assert_allclose(prior8.apply_power(1.0, v0),
                                   prior8.eigvals[0] ** -2 * v0, atol=1e-12)

    def test_random_compositions(self, prior8, rng):
        u = rng.standard_normal(prior8.n)
        for t1, t2 in rng.uniform(-1, 1, (10, 2)):
            lhs = prior8.apply_power(t1, prior8.apply_power(t2, u))
            rhs = prior8.apply_power(t1 + t2, u)
            np.testing.assert_allclose(lhs, rhs, atol=1e-8 * np.abs(rhs).max())

    def test_power_inverse_pair(self, prior8, rng):
        u = rng.standard_normal(prior8.n)
        back = prior8.apply_power(-0.3, prior8.apply_power(0.3, u))
        np.testing.assert_allclose(back, u, atol=1e-8)


class TestPrecision:
    @pytest.fixture
    def shifted(self, mesh8):
        return build_prior(mesh8, 0.5, mean=np.linspace(-1, 1, mesh8.n))

    def test_at_mean(self, shifted):
        np.testing.assert_allclose(shifted.apply_precision(shifted.mean), 0.0, atol=1e-12)

    def test_eigen_relation(self, shifted):
        v0 = shifted.eigvecs[:, 0]
        np.testing.assert_allclose(shifted.apply_precision(shifted.mean + v0),
                                   shifted.eigvals[0] ** 2 * v0, atol=1e-10)

    def test_inverse_pair(self, shifted, rng):
        u = rng.standard_normal(shifted.n)
        back = shifted.apply_power(1.0, shifted.apply_precision(u))
        np.testing.assert_allclose(back, u - shifted.mean, atol=1e-8)


class TestNorms:
    def test_zero(self, prior8):
        assert prior8.hilbert_norm(1.0, np.zeros(prior8.n)) == 0.0

    def test_eigvec(self, prior8):
        v0 = prior8.eigvecs[:, 0]
        assert prior8.hilbert_norm(1.0, v0) == pytest.approx(prior8.eigvals[0], rel=1e-10)

    def test_l2_at_order_zero(self, prior8, rng):
        u = rng.standard_normal(prior8.n)
        assert prior8.hilbert_norm(0.0, u) == pytest.approx(np.sqrt(prior8.inner(u, u)), rel=1e-10)

    def test_interpolation_inequality(self, prior8, rng):
        for u in rng.standard_normal((100, prior8.n)):
            mid = prior8.hilbert_norm(0.5, u)
            bound = np.sqrt(prior8.hilbert_norm(0.0, u) * prior8.hilbert_norm(1.0, u))
            assert mid <= bound * (1 + 1e-6)

    def test_h1_norm_grows_under_refinement(self):
        med = []
        for ng in (16, 32):
            prior = build_prior(build_mesh(ng), 0.5)
            med.append(np.median([prior.hilbert_norm(1.0, u) for u in prior.sample(5, 50)]))
        assert med[1] >= 1.2 * med[0]


class TestSampling:
    def test_deterministic(self, prior8):
        np.testing.assert_array_equal(prior8.sample(7, 3), prior8.sample(7, 3))
        assert not np.array_equal(prior8.sample(7, 3), prior8.sample(8, 3))

    def test_mode_variance(self, prior8):
        c = prior8.coords(prior8.sample(11, 5000))
        var = c[:, :5].var(axis=0)
        np.testing.assert_allclose(var, prior8.eigvals[:5] ** -2, rtol=0.1)

    def test_whitened_unit_variance(self, prior8):
        u = prior8.sample(12, 5000)
        white = prior8.coords(prior8.apply_power(-0.5, u - prior8.mean))
        np.testing.assert_allclose(white[:, :5].var(axis=0), 1.0, rtol=0.1)

    def test_mean_clt(self, prior8):
        c = prior8.coords(prior8.sample(13, 5000))
        bound = 3 * prior8.eigvals[0] ** -1 / np.sqrt(5000)
        assert np.all(np.abs(c.mean(axis=0)) <= bound)
