"""Gaussian prior N(u0, C0) with C0 = A^-2 and A = alpha (I - Laplacian), Neumann BCs.

Fractional powers of C0 come from a dense generalized eigendecomposition
of the discretized operator, ``alpha (M + S) v = lambda M v`` with
M-orthonormal eigenvectors.  In the coordinates ``c = V^T M u`` the
M-inner product is Euclidean and every power of C0 is diagonal with
entries ``lambda^-2t``; most of the package's dense algebra happens there.
"""
import numpy as np
import scipy.linalg as sla

from .exceptions import NumericalFailure
from .fem import assemble_mass, assemble_stiffness

DENSE_LIMIT = 5000


class GaussianPrior:
    def __init__(self, mesh, alpha, mean=None):
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha!r}")
        if mesh.n > DENSE_LIMIT:
            raise ValueError(f"dense spectral prior limited to n <= {DENSE_LIMIT}")
        self.mesh = mesh
        self.alpha = float(alpha)
        self.mean = np.zeros(mesh.n) if mean is None else mesh.check_field(mean, "mean").copy()
        self.mass = assemble_mass(mesh)
        mass = self.mass.toarray()
        stiff = assemble_stiffness(mesh, np.zeros(mesh.n)).toarray()
        try:
            lam, vecs = sla.eigh(self.alpha * (mass + stiff), mass)
        except (sla.LinAlgError, ValueError) as exc:
            raise NumericalFailure(f"prior eigendecomposition failed: {exc}") from exc
        # sign convention: first entry of non-negligible size is positive
        lead = np.argmax(np.abs(vecs) > 1e-8 * np.abs(vecs).max(axis=0), axis=0)
        signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
        self.eigvecs = vecs * signs
        self.eigvals = lam
        self._mv = mass @ self.eigvecs  # M V, so coords(u) = (M V)^T u

    @property
    def n(self):
        return self.mesh.n

    @property
    def c0_eigvals(self):
        """Eigenvalues of C0 itself, ``lambda_i^-2`` (descending)."""
        return self.eigvals ** -2.0

    def coords(self, u):
        """Coordinates in the M-orthonormal prior eigenbasis; works row-wise on 2-D input."""
        return np.asarray(u) @ self._mv

    def field(self, c):
        return np.asarray(c) @ self.eigvecs.T

    def dual_coords(self, g):
        """Coordinates of the Riesz representative of a dual (load) vector."""
        return np.asarray(g) @ self.eigvecs

    def riesz(self, g):
        """``M^-1 g``: the primal field representing a dual vector."""
        return self.field(self.dual_coords(g))

    def apply_power(self, t, u):
        """``C0^t u`` (no mean shift)."""
        return self.field(self.coords(u) * self.eigvals ** (-2.0 * t))

    def apply_precision(self, u):
        """``C0^-1 (u - u0)``."""
        return self.apply_power(-1.0, np.asarray(u) - self.mean)

    def hilbert_norm(self, t, u):
        """``||C0^(-t/2) u||`` in the M-weighted L2 norm."""
        return float(np.linalg.norm(self.coords(u) * self.eigvals ** t))

    def inner(self, u, v):
        return float(u @ (self.mass @ v))

    def sample(self, seed, count):
        """``count`` independent draws as rows of a (count, n) array."""
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((count, self.n))
        return self.mean + self.field(xi / self.eigvals)

    def cameron_martin_sq(self, u):
        """``||u - u0||^2_{H^1}``, twice the prior part of the negative log posterior."""
        return self.hilbert_norm(1.0, np.asarray(u) - self.mean) ** 2


def build_prior(mesh, alpha, mean=None):
    return GaussianPrior(mesh, alpha, mean)
