# %% [markdown]
# # Checking the particle samplers against a closed-form posterior
#
# A linear forward map with a Gaussian prior has a Gaussian posterior we can
# write down.  Here the "observations" are mollified point values of the
# log-permeability itself, so the same mesh, prior and measurement layout as
# the Darcy problem apply.

# %%
import numpy as np

from steinflow.baselines import laplace_sample, map_newton_cg, pcn
from steinflow.kernels import build_preconditioner
from steinflow.svgd import SvgdSettings, run
from steinflow.verify import linear_problem

mesh, prior, model = linear_problem(ng=16)
m_post, cov = model.analytic_posterior()
var_post = np.diag(cov)
print(f"{prior.n} nodes, {model.design.shape[0]} observations, sigma = {model.sigma:.3f}")


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# %% [markdown]
# Newton-CG with inexact inner solves reaches the MAP point in a handful of
# steps, and the Laplace approximation at that point *is* the posterior.

# %%
res = map_newton_cg(model, prior)
pre = build_preconditioner(model, prior, res.u)
print("Newton iterations:", res.iterations, " MAP error:", rel(res.u, m_post))

# %% [markdown]
# Start 30 particles from the Laplace approximation and run the mixture
# preconditioned update with the adaptive choice of s.

# %%
for s in (0.0, "adaptive", 0.5):
    ens = run(model, prior, laplace_sample(res.u, pre, 30, 0),
              SvgdSettings(algorithm="mpo", iters=30, s=s))
    print(f"s={s!s:>8}: mean error {rel(ens.particles.mean(0), m_post):.4f}, "
          f"variance error {rel(ens.particles.var(0), var_post):.3f}")

# %% [markdown]
# For scale: 30 exact posterior draws already miss the nodal variance by
# about a quarter in relative l2.

# %%
draws = np.random.default_rng(0).multivariate_normal(m_post, cov, size=30, method="eigh")
print("30 exact draws, variance error:", round(rel(draws.var(0), var_post), 3))

# %%
chain = pcn(model, prior, beta=0.3, n_iter=50_000, burn_in=5_000, thin=50, seed=1, init=m_post)
print(f"pCN: acceptance {chain.acceptance_rate:.2f}, variance error {rel(chain.variance, var_post):.3f}")
