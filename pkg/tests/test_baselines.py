"""pCN chains, Newton-CG and gradient-descent MAP, Laplace sampling."""
import numpy as np
import pytest

from steinflow.baselines import (
    laplace_sample,
    map_gradient_descent,
    map_newton_cg,
    newton_direction,
    objective,
    pcn,
)
from steinflow.kernels import build_preconditioner, prior_preconditioner
from steinflow.models import LinearGaussianModel, zero_potential_model


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestPcn:
    def test_prior_target_always_accepts(self, prior8):
        chain = pcn(zero_potential_model(prior8), prior8, beta=0.3, n_iter=500, thin=10)
        assert chain.acceptance_rate == 1.0

    def test_prior_target_mode_variances(self, prior8):
        chain = pcn(zero_potential_model(prior8), prior8, beta=0.8, n_iter=20000,
                    burn_in=100, thin=2, seed=3)
        var = prior8.coords(chain.samples)[:, :5].var(axis=0)
        np.testing.assert_allclose(var, prior8.eigvals[:5] ** -2, rtol=0.1)

    def test_store_size_and_streaming_variance(self, linear8):
        _, prior, model = linear8
        chain = pcn(model, prior, beta=0.3, n_iter=1000, burn_in=103, thin=1, seed=1)
        assert len(chain.samples) == 1000 - 103
        np.testing.assert_allclose(chain.variance, chain.samples.var(axis=0), rtol=1e-10)
        np.testing.assert_allclose(chain.mean, chain.samples.mean(axis=0), rtol=1e-10, atol=1e-14)
        thinned = pcn(model, prior, beta=0.3, n_iter=1000, burn_in=103, thin=7, seed=1)
        assert len(thinned.samples) == (1000 - 103) // 7
        np.testing.assert_array_equal(thinned.samples, chain.samples[6::7])

    def test_seed_reproducible(self, linear8):
        _, prior, model = linear8
        a = pcn(model, prior, n_iter=300, thin=10, seed=5)
        b = pcn(model, prior, n_iter=300, thin=10, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.trace == b.trace

    def test_stays_near_posterior_mean(self, linear8):
        _, prior, model = linear8
        m_post, C = model.analytic_posterior()
        chain = pcn(model, prior, beta=0.3, n_iter=40000, thin=10, seed=2, init=m_post)
        c = prior.coords(chain.samples)[:, :3]
        target = prior.coords(m_post)[:3]
        # batch-means standard error of the running mean at four checkpoints
        batches = c.reshape(40, -1, 3).mean(axis=1)
        tau_var = batches.var(axis=0, ddof=1) * (len(c) // 40)
        for k in (500, 1000, 2000, 4000):
            se = np.sqrt(tau_var / k)
            assert np.all(np.abs(c[:k].mean(axis=0) - target) <= 3 * se + 1e-12)

    def test_rejects_bad_beta(self, prior8):
        with pytest.raises(ValueError):
            pcn(zero_potential_model(prior8), prior8, beta=0.0)


class TestNewton:
    def test_linear_converges_fast(self, linear8):
        _, prior, model = linear8
        m_post, _ = model.analytic_posterior()
        res = map_newton_cg(model, prior, cg_rule="exact")
        assert res.iterations <= 3
        assert rel(res.u, m_post) <= 1e-8

    def test_darcy_stationarity(self, darcy16):
        _, prior, model = darcy16
        res = map_newton_cg(model, prior, max_newton=10)
        assert res.grad_norms[0] / res.grad_norms[-1] >= 1e4
        assert res.grad_norms[-1] < res.grad_norms[0]
        assert np.all(np.diff(res.values) <= 0)
        assert not res.line_search_failed

    def test_direction_solves_newton_system(self, darcy8):
        _, prior, model = darcy8
        u = 0.4 * prior.sample(1, 1)[0]
        d = newton_direction(model, prior, u)
        pre = build_preconditioner(model, prior, u)
        g = prior.riesz(model.gradient(u)) + prior.apply_precision(u)
        assert rel(pre.apply_B(d), -g) <= 1e-8

    def test_full_hessian_option(self, darcy8):
        _, prior, model = darcy8
        res = map_newton_cg(model, prior, max_newton=15, full_hessian=True)
        gn = map_newton_cg(model, prior, max_newton=15)
        assert res.converged and gn.converged
        assert rel(res.u, gn.u) <= 1e-6


class TestGradientDescent:
    def test_one_mode_quadratic(self, prior8):
        design = (prior8.mass @ prior8.eigvecs[:, 0])[None, :]  # observes the constant mode
        model = LinearGaussianModel(design, 1.0, [1.0], prior8)
        m_post, _ = model.analytic_posterior()
        v_star = objective(model, prior8, m_post)
        res = map_gradient_descent(model, prior8, max_iters=200)
        assert np.all(np.diff(res.values) <= 0)
        assert res.values[-1] == pytest.approx(v_star, rel=0.02)
        assert prior8.coords(res.u)[0] == pytest.approx(prior8.coords(m_post)[0], rel=0.1)
        # roundoff in the stiff modes is amplified by lambda_max^2 and throttles the step,
        # so plain descent stalls where Newton lands in one step
        assert not res.converged
        assert map_newton_cg(model, prior8, cg_rule="exact").iterations <= 2

    def test_monotone(self, darcy8):
        _, prior, model = darcy8
        res = map_gradient_descent(model, prior, max_iters=50)
        assert np.all(np.diff(res.values) <= 0)
        assert res.values[-1] == pytest.approx(objective(model, prior, res.u))


class TestLaplace:
    def test_mean(self, darcy8):
        _, prior, model = darcy8
        u = map_newton_cg(model, prior).u
        pre = build_preconditioner(model, prior, u)
        draws = laplace_sample(u, pre, 2000, seed=3)
        c = prior.coords(draws - u) @ pre.q  # B-eigencoordinates, variance 1/theta
        se = np.sqrt(1 / pre.theta / 2000)
        assert np.all(np.abs(c.mean(axis=0)) <= 4.5 * se)

    def test_top_variance(self, darcy8):
        _, prior, model = darcy8
        u = map_newton_cg(model, prior).u
        pre = build_preconditioner(model, prior, u)
        proj = prior.coords(laplace_sample(u, pre, 2000, seed=4) - u) @ pre.q[:, 0]
        assert proj.var() == pytest.approx(1 / pre.theta[0], rel=0.1)

    def test_prior_preconditioner_gives_shifted_prior(self, prior8):
        center = np.linspace(0, 1, prior8.n)
        draws = laplace_sample(center, prior_preconditioner(prior8), 4000, seed=5)
        var = prior8.coords(draws - center)[:, :5].var(axis=0)
        np.testing.assert_allclose(var, prior8.eigvals[:5] ** -2, rtol=0.1)
