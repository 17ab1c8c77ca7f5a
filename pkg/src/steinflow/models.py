"""Forward models behind a common contract.

Every model exposes ``potential(u)``, ``gradient(u)`` (a dual vector, the
derivative with respect to the nodal coefficients), ``gn_hessian_action``,
``full_hessian_action`` and ``gn_hessian_matrix``.  PDE models also
expose ``linearize(u)``, which solves the state once and keeps the
factorization for any number of derivative evaluations at that point.
"""
from dataclasses import dataclass

import numpy as np

from .fem import (
    DirichletSolver,
    assemble_load,
    assemble_stiffness,
    element_coefficient,
    element_gradients,
    scatter_vector,
)

# 7-point degree-5 rule on the reference triangle, barycentric points
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_QUAD_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]
)
_QUAD_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _refined_rule(k):
    """Composite rule on a k x k barycentric refinement: (points as bary, weights)."""
    corners = []
    for i in range(k):
        for j in range(k - i):
            corners.append([(i, j), (i + 1, j), (i, j + 1)])
            if i + j < k - 1:
                corners.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
    corners = np.array(corners, dtype=float) / k  # (T, 3, 2) in (xi, eta)
    ref = np.einsum("qa,tai->tqi", _QUAD_BARY, corners).reshape(-1, 2)
    bary = np.column_stack([1.0 - ref.sum(axis=1), ref])
    weights = np.tile(_QUAD_W, len(corners)) / len(corners)
    return bary, weights


def mollifier_functionals(mesh, points, delta):
    """Dual vectors of the Gaussian-mollified point evaluations, shape (N_d, n).

    Row j holds ``int g_j(x) phi_i(x) dx`` with
    ``g_j = exp(-|x - x_j|^2 / (2 delta^2)) / (2 pi delta^2)``.  Elements are
    refined until sub-cells are no larger than ``delta / 2``; elements farther
    than ``8 delta`` from the point contribute below double precision and
    are skipped.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = max(1, int(np.ceil(2.0 * mesh.h / delta)))
    bary, weights = _refined_rule(k)
    verts = mesh.nodes[mesh.elements]  # (E, 3, 2)
    lo, hi = verts.min(axis=1), verts.max(axis=1)
    out = np.zeros((points.shape[0], mesh.n))
    norm = 1.0 / (2.0 * np.pi * delta**2)
    for j, xj in enumerate(points):
        gap = np.maximum(np.maximum(lo - xj, xj - hi), 0.0)
        near = np.flatnonzero(np.hypot(gap[:, 0], gap[:, 1]) <= 8.0 * delta)
        xq = np.einsum("qa,eai->eqi", bary, verts[near])
        g = norm * np.exp(-np.sum((xq - xj) ** 2, axis=-1) / (2.0 * delta**2))
        local = np.einsum("eq,q,qa->ea", g, weights, bary) * mesh.areas[near, None]
        np.add.at(out[j], mesh.elements[near], local)
    return out


def grid_points(k):
    """``k x k`` measurement grid strictly inside the unit square."""
    t = np.arange(1, k + 1) / (k + 1)
    x, y = np.meshgrid(t, t)
    return np.column_stack([x.ravel(), y.ravel()])


@dataclass
class MeasurementSetup:
    points: np.ndarray
    delta: float
    sigma: float
    data: np.ndarray
    functionals: np.ndarray  # (N_d, n) dual vectors

    @classmethod
    def build(cls, mesh, points, delta, sigma, data=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not (delta > 0 and sigma > 0):
            raise ValueError("delta and sigma must be positive")
        if np.any(points <= 0.0) or np.any(points >= 1.0):
            raise ValueError("measurement points must lie strictly inside the domain")
        data = np.zeros(len(points)) if data is None else np.asarray(data, dtype=float)
        if data.shape != (len(points),):
            raise ValueError(f"expected {len(points)} data values, got {data.shape}")
        return cls(points, float(delta), float(sigma), data,
                   mollifier_functionals(mesh, points, delta))

    def with_data(self, data, sigma=None):
        data = np.asarray(data, dtype=float)
        if data.shape != self.data.shape:
            raise ValueError(f"expected {self.data.shape} data values, got {data.shape}")
        return MeasurementSetup(self.points, self.delta,
                                self.sigma if sigma is None else float(sigma),
                                data, self.functionals)


class DarcyLinearization:
    """State, adjoint and factorization of the Darcy problem at one parameter field."""

    def __init__(self, model, u):
        mesh = model.mesh
        self.model = model
        self.u = mesh.check_field(u, "u")
        self.coeff = element_coefficient(mesh, self.u)
        self.solver = DirichletSolver.from_logcoeff(mesh, self.u)
        self.w = self.solver.solve(model.load)
        self.misfit = model.observe(self.w) - model.measurement.data
        self._p = None

    @property
    def potential(self):
        return 0.5 * float(self.misfit @ self.misfit) / self.model.sigma**2

    @property
    def adjoint(self):
        if self._p is None:
            rhs = -self.model.functionals.T @ self.misfit / self.model.sigma**2
            self._p = self.model.adjoint_sign * self.solver.solve(rhs)
        return self._p

    def _pair(self, a, b):
        """Per-element ``(1/3) e^u grad a . grad b |e|`` scattered to nodes."""
        mesh = self.model.mesh
        ga, gb = element_gradients(mesh, a), element_gradients(mesh, b)
        val = self.coeff * mesh.areas * np.sum(ga * gb, axis=1) / 3.0
        return scatter_vector(mesh, np.repeat(val[:, None], 3, axis=1))

    def _coeff_variation(self, uhat, state):
        """Load vector of ``-div(uhat e^u grad state)``, i.e. dK[uhat] @ state."""
        mesh = self.model.mesh
        ubar = uhat[mesh.elements].mean(axis=1)
        flux = (self.coeff * ubar * mesh.areas)[:, None] * element_gradients(mesh, state)
        local = np.einsum("eai,ei->ea", mesh.grads, flux)
        return scatter_vector(mesh, local)

    def gradient(self):
        return self._pair(self.adjoint, self.w)

    def incremental_state(self, uhat):
        return self.solver.solve(-self._coeff_variation(uhat, self.w))

    def gn_hessian_action(self, uhat):
        uhat = self.model.mesh.check_field(uhat, "uhat")
        what = self.incremental_state(uhat)
        rhs = -self.model.functionals.T @ (self.model.observe(what)) / self.model.sigma**2
        return self._pair(self.solver.solve(rhs), self.w)

    def full_hessian_action(self, uhat):
        uhat = self.model.mesh.check_field(uhat, "uhat")
        mesh = self.model.mesh
        p = self.adjoint
        what = self.incremental_state(uhat)
        rhs = (-self._coeff_variation(uhat, p)
               - self.model.functionals.T @ self.model.observe(what) / self.model.sigma**2)
        phat = self.solver.solve(rhs)
        ubar = uhat[mesh.elements].mean(axis=1)
        gw, gp = element_gradients(mesh, self.w), element_gradients(mesh, p)
        term1 = self.coeff * mesh.areas * ubar * np.sum(gw * gp, axis=1) / 3.0
        direct = scatter_vector(mesh, np.repeat(term1[:, None], 3, axis=1))
        return direct + self._pair(phat, self.w) + self._pair(p, what)

    def jacobian(self):
        """``d observe(w(u)) / du`` as an (N_d, n) matrix, one adjoint solve per datum."""
        lam = self.solver.solve(self.model.functionals.T)  # (n, N_d)
        mesh = self.model.mesh
        gw = element_gradients(mesh, self.w)  # (E, 2)
        glam = np.einsum("eam,eai->eim", lam[mesh.elements], mesh.grads)  # (E, 2, N_d)
        val = -(self.coeff * mesh.areas / 3.0)[:, None] * np.einsum("ei,eim->em", gw, glam)
        jac = np.zeros((lam.shape[1], mesh.n))
        for a in range(3):
            np.add.at(jac.T, mesh.elements[:, a], val)
        return jac


class DarcyModel:
    """Log-permeability to mollified pressure observations, ``-div(e^u grad w) = f``."""

    def __init__(self, mesh, measurement, source=1.0, adjoint_sign=1.0):
        self.mesh = mesh
        self.measurement = measurement
        source = source(mesh.nodes[:, 0], mesh.nodes[:, 1]) if callable(source) else source
        self.load = assemble_load(mesh, source)
        self.adjoint_sign = float(adjoint_sign)

    @property
    def functionals(self):
        return self.measurement.functionals

    @property
    def sigma(self):
        return self.measurement.sigma

    def with_data(self, data, sigma=None):
        out = DarcyModel.__new__(DarcyModel)
        out.__dict__.update(self.__dict__)
        out.measurement = self.measurement.with_data(data, sigma)
        return out

    def linearize(self, u):
        return DarcyLinearization(self, u)

    def solve_forward(self, u):
        return self.linearize(u).w

    def observe(self, w):
        return self.functionals @ w

    def predict(self, u):
        return self.observe(self.solve_forward(u))

    def potential(self, u):
        return self.linearize(u).potential

    def gradient(self, u):
        return self.linearize(u).gradient()

    def gn_hessian_action(self, u, uhat):
        return self.linearize(u).gn_hessian_action(uhat)

    def full_hessian_action(self, u, uhat):
        return self.linearize(u).full_hessian_action(uhat)

    def jacobian(self, u):
        return self.linearize(u).jacobian()

    def gn_hessian_matrix(self, u):
        """Dense ``J^T J / sigma^2`` (dual-dual), built from the explicit Jacobian."""
        jac = self.jacobian(u)
        return jac.T @ jac / self.sigma**2


class LinearGaussianModel:
    """``d = B u + noise`` with a Gaussian prior; the posterior is known in closed form."""

    def __init__(self, design, sigma, data, prior):
        self.design = np.atleast_2d(np.asarray(design, dtype=float))
        self.sigma = float(sigma)
        self.data = np.asarray(data, dtype=float)
        self.prior = prior
        self.mesh = prior.mesh
        if self.design.shape[1] != prior.n or self.data.shape != (self.design.shape[0],):
            raise ValueError("design, data and prior dimensions disagree")
        if self.design.shape[0] * self.design.shape[1] > 2000 * 2000:
            raise ValueError("linear model is dense; keep sizes <= 2000")

    def with_data(self, data, sigma=None):
        return LinearGaussianModel(self.design, self.sigma if sigma is None else sigma,
                                   data, self.prior)

    def linearize(self, u):
        return _LinearPoint(self, u)

    def predict(self, u):
        return self.design @ u

    def potential(self, u):
        r = self.design @ u - self.data
        return 0.5 * float(r @ r) / self.sigma**2

    def gradient(self, u):
        return self.design.T @ (self.design @ u - self.data) / self.sigma**2

    def gn_hessian_action(self, u, uhat):
        return self.design.T @ (self.design @ uhat) / self.sigma**2

    full_hessian_action = gn_hessian_action

    def jacobian(self, u=None):
        return self.design

    def gn_hessian_matrix(self, u=None):
        return self.design.T @ self.design / self.sigma**2

    def analytic_posterior(self):
        """Posterior mean and nodal covariance matrix ``(m_post, C_post)``."""
        prior = self.prior
        bv = self.design @ prior.eigvecs
        prec = bv.T @ bv / self.sigma**2 + np.diag(prior.eigvals**2)
        chol = np.linalg.cholesky(prec)
        rhs = bv.T @ (self.data - self.design @ prior.mean) / self.sigma**2
        shift = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        half = np.linalg.solve(chol, prior.eigvecs.T)  # L^-1 V^T
        return prior.mean + prior.eigvecs @ shift, half.T @ half


class _LinearPoint:
    def __init__(self, model, u):
        self.model, self.u = model, np.asarray(u, dtype=float)

    @property
    def potential(self):
        return self.model.potential(self.u)

    def gradient(self):
        return self.model.gradient(self.u)

    def gn_hessian_action(self, uhat):
        return self.model.gn_hessian_action(self.u, uhat)

    full_hessian_action = gn_hessian_action

    def jacobian(self):
        return self.model.design


def zero_potential_model(prior):
    """Linear model with ``Phi = 0``: the posterior is the prior."""
    return LinearGaussianModel(np.zeros((1, prior.n)), 1.0, [0.0], prior)


TRUTH_FIELDS = {
    "zero": lambda x, y: np.zeros_like(x),
    "bumps": lambda x, y: (
        np.exp(-((x - 0.3) ** 2 + (y - 0.7) ** 2) / 0.02)
        - 0.8 * np.exp(-((x - 0.7) ** 2 + (y - 0.3) ** 2) / 0.03)
    ),
    "smooth": lambda x, y: 0.5 * np.cos(np.pi * x) * np.cos(2 * np.pi * y) + 0.3 * x,
}


def truth_field(mesh, name):
    try:
        fn = TRUTH_FIELDS[name]
    except KeyError:
        raise KeyError(f"unknown truth field {name!r}; known: {sorted(TRUTH_FIELDS)}") from None
    return fn(mesh.nodes[:, 0], mesh.nodes[:, 1])


def synthesize(model, truth, noise_level=0.01, seed=0):
    """Noisy data from ``truth``; sigma is ``noise_level * max |clean data|``.

    Returns ``(data, clean, sigma)``.
    """
    clean = model.predict(truth)
    sigma = noise_level * float(np.max(np.abs(clean)))
    if not sigma > 0:
        raise ValueError("noise-free data are identically zero; relative noise is undefined")
    rng = np.random.default_rng(seed)
    return clean + sigma * rng.standard_normal(clean.shape), clean, sigma
