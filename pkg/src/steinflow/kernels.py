"""Gaussian RBF kernels on Hilbert-scale norms and Hessian-based preconditioners.

All dense algebra is done in the prior eigen-coordinates ``c = V^T M u``
(see :mod:`steinflow.prior`), where the M-inner product is Euclidean and
``C0^t`` is ``diag(lambda^-2t)``.  A :class:`Preconditioner` stores the
eigendecomposition of

    B~ = V^T H_GN V + diag(lambda^2),

the coordinate matrix of ``B = M^-1 H_GN + C0^-1``, which is symmetric
because V is M-orthonormal.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .exceptions import NumericalFailure

MIN_BANDWIDTH = 1e-12


@dataclass(frozen=True)
class HilbertScaleNorm:
    """``||u||_t = ||C0^(-t/2) u||`` in the M-weighted L2 sense; ``t = 0`` is plain L2."""

    prior: object
    t: float = 0.0

    def sq(self, u):
        return self.prior.hilbert_norm(self.t, u) ** 2

    def gram(self, u):
        """The Gram operator ``G = C0^-t`` applied to ``u`` (Riesz map of ``<u, .>_t``)."""
        return self.prior.apply_power(-self.t, u)


@dataclass(frozen=True)
class KernelConfig:
    h: object = "median"  # positive float or "median"
    norm_order: float = 0.0

    def __post_init__(self):
        if self.h != "median" and not (isinstance(self.h, (int, float)) and self.h > 0):
            raise ValueError(f"bandwidth must be positive or 'median', got {self.h!r}")


def rbf(u, v, h, norm):
    """``exp(-||u - v||^2 / h)``."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h!r}")
    return float(np.exp(-norm.sq(np.asarray(u) - np.asarray(v)) / h))


def rbf_grad_terms(particles, j, target, h, norm):
    """Kernel value and repulsive field of source particle ``j`` at ``target``.

    Returns ``(K(u_j, target), sum_k D_k K(u_j, target) e_k)``, the
    derivative being taken with respect to the source ``u_j``.  The
    second entry equals ``(2/h) K G (target - u_j)``.
    """
    diff = np.asarray(target) - particles[j]
    k = float(np.exp(-norm.sq(diff) / h))
    return k, (2.0 / h) * k * norm.gram(diff)


def median_bandwidth(sq_dists, m):
    """``med^2 / log(m + 1)`` from a flat array of pairwise squared distances.

    The median is taken over distances (not squared distances).  With no
    pairs (``m = 1``) or a zero median (mostly coincident particles) the
    rule is undefined and 1.0 is returned; a tiny ``h`` would only amplify
    roundoff in the ``2/h`` repulsion of coincident pairs.
    """
    sq_dists = np.asarray(sq_dists, dtype=float).ravel()
    if sq_dists.size == 0:
        return 1.0
    med = np.median(np.sqrt(np.maximum(sq_dists, 0.0)))
    if med == 0.0:
        return 1.0
    return max(med**2 / np.log(m + 1.0), MIN_BANDWIDTH)


def pairwise_sq(y):
    """Squared Euclidean distances between the rows of ``y``.

    Computed from explicit differences, so coincident rows give exactly 0.
    """
    return squareform(pdist(np.atleast_2d(y), "sqeuclidean"))


class Preconditioner:
    """``B = H_GN + C0^-1`` at an anchor, with its square roots and inverse.

    Parameters
    ----------
    prior : GaussianPrior
    anchor : ndarray
        Nodal field the Gauss-Newton Hessian was built at.
    gn_coords : ndarray or None
        ``V^T H_GN V``, the Gauss-Newton Hessian in prior coordinates;
        None means ``B = C0^-1``.
    """

    def __init__(self, prior, anchor, gn_coords=None):
        self.prior = prior
        self.anchor = np.asarray(anchor, dtype=float)
        lam2 = prior.eigvals**2
        mat = np.diag(lam2)
        if gn_coords is not None:
            mat = mat + 0.5 * (gn_coords + gn_coords.T)
        theta, q = np.linalg.eigh(mat)
        floor = (1.0 - 1e-8) * lam2.min()
        if not np.all(np.isfinite(theta)) or theta[0] < floor:
            raise NumericalFailure(
                f"preconditioner eigenvalue {theta[0]:.3e} below prior floor {floor:.3e}"
            )
        self.theta = theta
        self.q = q
        self.matrix = mat

    # coordinate-space operators --------------------------------------------
    def _fn(self, f):
        return (self.q * f(self.theta)) @ self.q.T

    @property
    def binv_coords(self):
        return self._fn(lambda t: 1.0 / t)

    @property
    def bhalf_coords(self):
        return self._fn(np.sqrt)

    @property
    def bneghalf_coords(self):
        return self._fn(lambda t: t**-0.5)

    def t_matrix(self, s):
        """Coordinate matrix of ``T = C0^(s/2) B^(1/2)``."""
        return (self.prior.eigvals ** (-s))[:, None] * self.bhalf_coords

    def repulsive_matrix(self, s):
        """Coordinate matrix of ``C0^-s T* T = C0^-s B^(1/2) C0^s B^(1/2)`` (no B^-1)."""
        a = self.t_matrix(s)
        return (self.prior.eigvals ** (2.0 * s))[:, None] * (a.T @ a)

    # field operators ------------------------------------------------------
    def _apply(self, mat, u):
        return self.prior.field(self.prior.coords(u) @ mat.T)

    def apply_B(self, u):
        return self._apply(self.matrix, u)

    def apply_Binv(self, u):
        return self._apply(self.binv_coords, u)

    def apply_Bhalf(self, u):
        return self._apply(self.bhalf_coords, u)

    def apply_Bneghalf(self, u):
        return self._apply(self.bneghalf_coords, u)

    def t_norm_sq(self, s, v):
        """``<C0^s B^(1/2) v, B^(1/2) v>_M``."""
        y = self.t_matrix(s) @ self.prior.coords(v)
        return float(y @ y)

    def apply_kernel_operator(self, s, scalar_k, w):
        """``k T^-1 C0^s (T^-1)^* w``, which is exactly ``k B^-1 w``."""
        return scalar_k * self.apply_Binv(w)

    def repulsive_operator(self, s, v):
        """``B^-1 C0^-s B^(1/2) C0^s B^(1/2) v``; the identity at ``s = 0``."""
        return self._apply(self.binv_coords @ self.repulsive_matrix(s), v)

    def sample(self, center, count, seed):
        """Draws from ``N(center, B^-1)`` as rows of a (count, n) array."""
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((count, self.prior.n))
        return np.asarray(center) + self.prior.field((xi / np.sqrt(self.theta)) @ self.q.T)


def gn_hessian_coords(model, prior, anchor, method="jacobian", rank="dense"):
    """``V^T H_GN V`` at ``anchor``.

    ``method="jacobian"`` uses the explicit data Jacobian (one adjoint
    solve per datum); ``method="columns"`` applies the Hessian action to
    every prior eigenvector.  An integer ``rank`` keeps only the leading
    eigenpairs of the prior-preconditioned Hessian.
    """
    v = prior.eigvecs
    if method == "jacobian":
        jv = model.jacobian(anchor) @ v
        gn = jv.T @ jv / model.sigma**2
    elif method == "columns":
        lin = model.linearize(anchor)
        gn = v.T @ np.column_stack([lin.gn_hessian_action(col) for col in v.T])
    else:
        raise ValueError(f"unknown Hessian method {method!r}")
    if rank != "dense":
        gn = truncate_gn(gn, prior, rank)
    return gn


def truncate_gn(gn, prior, rank):
    """Keep the ``rank`` leading eigenpairs of the prior-preconditioned GN Hessian."""
    r = int(rank)
    if r < 0:
        raise ValueError(f"rank must be nonnegative, got {rank!r}")
    scale = 1.0 / prior.eigvals
    pp = scale[:, None] * gn * scale[None, :]
    d, w = np.linalg.eigh(0.5 * (pp + pp.T))
    d, w = np.maximum(d[::-1][:r], 0.0), w[:, ::-1][:, :r]
    lw = prior.eigvals[:, None] * w
    return (lw * d) @ lw.T


def build_preconditioner(model, prior, anchor, method="jacobian", rank="dense"):
    if prior.n > 5000:
        raise ValueError("dense preconditioners limited to n <= 5000")
    anchor = prior.mesh.check_field(anchor, "anchor")
    return Preconditioner(prior, anchor, gn_hessian_coords(model, prior, anchor, method, rank))


def prior_preconditioner(prior, anchor=None):
    """``B = C0^-1``, the prior-only preconditioner."""
    return Preconditioner(prior, prior.mean if anchor is None else anchor)
