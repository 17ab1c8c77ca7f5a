"""Self-checks: adjoint gradient, Hessian actions and operator identities.

Each check returns a :class:`Check`; :func:`run_checks` bundles them into a
report that the ``verify`` subcommand prints as JSON.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .fem import build_mesh
from .kernels import build_preconditioner, pairwise_sq
from .models import (
    DarcyModel,
    LinearGaussianModel,
    MeasurementSetup,
    grid_points,
    mollifier_functionals,
    synthesize,
    truth_field,
)
from .prior import build_prior

FD_STEPS = (1e-2, 1e-5, 1e-9)
GRADIENT_STEP = 1e-5
GRADIENT_TOL = 1e-5
HESSIAN_TOL = 1e-3
SYMMETRY_TOL = 1e-8
OPERATOR_TOL = 1e-9


@dataclass
class Check:
    name: str
    passed: bool
    error: float
    tolerance: float

    def as_dict(self):
        return asdict(self)


def darcy_problem(ng=16, alpha=0.5, obs_grid=5, delta=0.02, truth="bumps", noise=0.01,
                  seed=0, adjoint_sign=1.0):
    """The default Darcy test problem with synthetic 1%-noise data."""
    mesh = build_mesh(ng)
    prior = build_prior(mesh, alpha)
    meas = MeasurementSetup.build(mesh, grid_points(obs_grid), delta, 1.0)
    model = DarcyModel(mesh, meas, adjoint_sign=adjoint_sign)
    data, _, sigma = synthesize(model, truth_field(mesh, truth), noise, seed)
    return mesh, prior, model.with_data(data, sigma)


def linear_problem(ng=16, alpha=0.5, obs_grid=5, delta=0.05, truth="bumps", noise=0.5, seed=0):
    """Mollified point observations of the field itself: a conjugate Gaussian problem.

    The default noise (half the largest clean datum) keeps the posterior
    broad enough for a 2e5-step pCN chain to resolve its variance.
    """
    mesh = build_mesh(ng)
    prior = build_prior(mesh, alpha)
    design = mollifier_functionals(mesh, grid_points(obs_grid), delta)
    model = LinearGaussianModel(design, 1.0, np.zeros(design.shape[0]), prior)
    data, _, sigma = synthesize(model, truth_field(mesh, truth), noise, seed)
    return mesh, prior, model.with_data(data, sigma)


def _test_pairs(prior, count, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    us = scale * prior.sample(rng.integers(2**32), count)
    dirs = prior.sample(rng.integers(2**32), count) - prior.mean
    return us, dirs


def gradient_errors(model, prior, count=5, seed=0, steps=FD_STEPS):
    """Relative errors of central differences of Phi vs ``<DPhi, v>``, shape (steps, pairs)."""
    us, dirs = _test_pairs(prior, count, seed)
    out = np.empty((len(steps), count))
    for p, (u, v) in enumerate(zip(us, dirs)):
        exact = float(model.gradient(u) @ v)
        for i, eps in enumerate(steps):
            fd = (model.potential(u + eps * v) - model.potential(u - eps * v)) / (2 * eps)
            out[i, p] = abs(fd - exact) / abs(exact)
    return out


def hessian_errors(model, prior, count=3, seed=1, eps=1e-5):
    """Full-Hessian action vs central differences of the gradient and of Phi.

    Returns ``(action_errors, quadratic_form_errors)``.
    """
    us, dirs = _test_pairs(prior, count, seed)
    act, quad = [], []
    for u, v in zip(us, dirs):
        hv = model.full_hessian_action(u, v)
        fd = (model.gradient(u + eps * v) - model.gradient(u - eps * v)) / (2 * eps)
        act.append(np.linalg.norm(hv - fd) / np.linalg.norm(hv))
        e2 = 1e-3
        second = (model.potential(u + e2 * v) - 2 * model.potential(u)
                  + model.potential(u - e2 * v)) / e2**2
        quad.append(abs(second - hv @ v) / abs(hv @ v))
    return np.array(act), np.array(quad)


def symmetry_errors(model, prior, seed=2):
    """Symmetry defects of the full and GN actions and the GN PSD defect (relative)."""
    us, dirs = _test_pairs(prior, 3, seed)
    u, v, w = us[0], dirs[1], dirs[2]
    lin = model.linearize(u)
    out = {}
    for name, act in (("full", lin.full_hessian_action), ("gn", lin.gn_hessian_action)):
        a, b = w @ act(v), v @ act(w)
        out[name] = abs(a - b) / max(abs(a), abs(b))
    gn = prior.eigvecs.T @ model.gn_hessian_matrix(u) @ prior.eigvecs
    ev = np.linalg.eigvalsh(0.5 * (gn + gn.T))
    out["gn_psd"] = max(0.0, -ev[0]) / ev[-1]
    return out


def _dense(op, prior):
    """Nodal matrix of a linear field operator."""
    return np.column_stack([op(col) for col in np.eye(prior.n)])


def operator_errors(seed=3, ng=8, s_values=(0.0, 0.25, 0.5)):
    """Dense-oracle defects of the prior and preconditioner identities at small ng."""
    mesh, prior, model = darcy_problem(ng=ng, obs_grid=3, delta=0.05)
    rng = np.random.default_rng(seed)
    anchor = 0.3 * prior.sample(rng.integers(2**32), 1)[0]
    pre = build_preconditioner(model, prior, anchor)
    mass = prior.mass.toarray()
    minv = np.linalg.inv(mass)
    errs = {}

    def rel(a, b):
        return np.linalg.norm(a - b) / np.linalg.norm(b)

    c_half = _dense(lambda x: prior.apply_power(0.5, x), prior)
    c_quarter = _dense(lambda x: prior.apply_power(0.25, x), prior)
    c_3q = _dense(lambda x: prior.apply_power(0.75, x), prior)
    c_one = _dense(lambda x: prior.apply_power(1.0, x), prior)
    errs["semigroup"] = max(rel(c_half @ c_half, c_one), rel(c_quarter @ c_half, c_3q))

    b = _dense(pre.apply_B, prior)
    bh = _dense(pre.apply_Bhalf, prior)
    binv = _dense(pre.apply_Binv, prior)
    errs["bhalf_squared"] = rel(bh @ bh, b)
    errs["binv_b"] = rel(binv @ b, np.eye(prior.n))
    # B = M^-1 H + C0^-1 assembled independently of the coordinate code
    h_gn = model.gn_hessian_matrix(anchor)
    c0_inv = np.linalg.inv(c_one)
    errs["b_assembly"] = rel(b, minv @ h_gn + c0_inv)
    ident = 0.0
    for s in s_values:
        cs = _dense(lambda x: prior.apply_power(s, x), prior)
        c_s2 = _dense(lambda x: prior.apply_power(s / 2, x), prior)
        t = c_s2 @ bh
        tinv = np.linalg.inv(t)
        tinv_adj = minv @ tinv.T @ mass  # adjoint in the M-inner product
        ident = max(ident, rel(tinv @ cs @ tinv_adj, binv))
    errs["t_identity"] = ident
    parts = prior.sample(rng.integers(2**32), 12)
    sq = pairwise_sq(prior.coords(parts))
    gram = np.exp(-sq / np.median(sq[np.triu_indices(12, 1)]))
    errs["gram_psd"] = max(0.0, -np.linalg.eigvalsh(gram)[0])
    return errs


def run_checks(ng=16, flip_adjoint=False, seed=0):
    """All checks; returns ``(checks, fd_table)``."""
    _, prior, model = darcy_problem(ng=ng, adjoint_sign=-1.0 if flip_adjoint else 1.0)
    checks = []
    table = gradient_errors(model, prior, seed=seed)
    at_step = table[FD_STEPS.index(GRADIENT_STEP)] if GRADIENT_STEP in FD_STEPS else table.min(axis=0)
    worst = float(at_step.max())
    checks.append(Check("gradient_fd", worst <= GRADIENT_TOL, worst, GRADIENT_TOL))
    act, quad = hessian_errors(model, prior, seed=seed + 1)
    checks.append(Check("hessian_action_fd", float(act.max()) <= HESSIAN_TOL, float(act.max()),
                        HESSIAN_TOL))
    checks.append(Check("hessian_quadratic_fd", float(quad.max()) <= HESSIAN_TOL,
                        float(quad.max()), HESSIAN_TOL))
    for name, err in symmetry_errors(model, prior, seed=seed + 2).items():
        checks.append(Check(f"symmetry_{name}", bool(err <= SYMMETRY_TOL), float(err), SYMMETRY_TOL))
    for name, err in operator_errors(seed=seed + 3).items():
        tol = 1e-10 if name == "gram_psd" else OPERATOR_TOL
        checks.append(Check(f"operator_{name}", bool(err <= tol), float(err), tol))
    fd_rows = [
        {"step": step, "pair": p, "rel_error": float(table[i, p])}
        for i, step in enumerate(FD_STEPS)
        for p in range(table.shape[1])
    ]
    return checks, fd_rows
