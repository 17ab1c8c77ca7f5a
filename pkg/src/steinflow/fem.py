"""P1 finite elements on a uniform triangulation of the unit square.

Fields are plain 1-D float arrays of nodal coefficients in the mesh's
row-major node order (index ``j * (ng + 1) + i`` for the node at
``(i / ng, j / ng)``).  Assembled operators are ``scipy.sparse`` CSR
matrices acting on those coefficient vectors; load vectors ("dual
vectors") hold the integrals of a functional against each hat function.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path

from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NumericalFailure

DIRECT_SOLVE_LIMIT = 5000
SOLVE_RTOL = 1e-10
FIELD_MAGIC = b"SFLD0001"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform triangulation of [0, 1]^2 with ``ng`` cells per side.

    Each square cell is split along its lower-left to upper-right diagonal,
    so every interior node touches six triangles.
    """

    ng: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    interior_nodes: np.ndarray
    areas: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)  # (E, 3, 2) hat-function gradients
    unit_stiffness: np.ndarray = field(repr=False)  # (E, 3, 3), coefficient 1

    @property
    def n(self):
        return self.nodes.shape[0]

    @property
    def h(self):
        return 1.0 / self.ng

    def node_index(self, i, j):
        return j * (self.ng + 1) + i

    def nearest_node(self, x, y):
        i = int(round(x * self.ng))
        j = int(round(y * self.ng))
        return self.node_index(i, j)

    @cached_property
    def band_scatter(self):
        """Map from element-local stiffness entries to upper band storage.

        Returns ``(mask, index, shape)``: the local entries selected by
        ``mask`` (flattened (E, 3, 3)) sum into ``index`` of a flattened
        band array of ``shape`` holding the interior-reduced matrix.
        """
        pos = np.full(self.n, -1)
        pos[self.interior_nodes] = np.arange(self.interior_nodes.size)
        loc = pos[self.elements]
        rows = np.repeat(loc, 3, axis=1).ravel()
        cols = np.tile(loc, (1, 3)).ravel()
        mask = (rows >= 0) & (cols >= 0) & (rows <= cols)
        bw = int(np.max(cols[mask] - rows[mask]))
        shape = (bw + 1, self.interior_nodes.size)
        index = (bw + rows[mask] - cols[mask]) * shape[1] + cols[mask]
        return mask, index, shape

    def check_field(self, u, name="field"):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"{name} has shape {u.shape}, mesh expects ({self.n},)")
        return u


def build_mesh(ng):
    """Build the uniform mesh with ``ng`` cells per side (``ng >= 2``)."""
    if int(ng) != ng or ng < 2:
        raise ValueError(f"ng must be an integer >= 2, got {ng!r}")
    ng = int(ng)
    ticks = np.linspace(0.0, 1.0, ng + 1)
    xx, yy = np.meshgrid(ticks, ticks)  # rows vary in y
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(ng), np.arange(ng))
    n00 = (j * (ng + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + ng + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * ng * ng, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    on_edge = (
        np.isclose(nodes[:, 0], 0.0)
        | np.isclose(nodes[:, 0], 1.0)
        | np.isclose(nodes[:, 1], 0.0)
        | np.isclose(nodes[:, 1], 1.0)
    )
    boundary = np.flatnonzero(on_edge)
    interior = np.flatnonzero(~on_edge)

    p = nodes[elements]  # (E, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * twice_area
    # grad of barycentric coordinate a: rot90 of the opposite edge / (2A)
    grads = np.empty((elements.shape[0], 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / twice_area
        grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / twice_area
    k0 = areas[:, None, None] * np.einsum("eai,ebi->eab", grads, grads)
    k0 = 0.5 * (k0 + k0.transpose(0, 2, 1))

    return Mesh(
        ng=ng,
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary,
        interior_nodes=interior,
        areas=areas,
        grads=grads,
        unit_stiffness=k0,
    )


def _scatter(mesh, local):
    """Sum element matrices ``local`` (E, 3, 3) into a CSR matrix."""
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n, mesh.n))


def assemble_mass(mesh):
    """Exact P1 mass matrix ``M_ij = int phi_i phi_j``."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, mesh.areas[:, None, None] * ref)


def element_coefficient(mesh, logcoeff):
    """``exp(u)`` per element, with ``u`` taken at the average of its vertex values."""
    logcoeff = mesh.check_field(logcoeff, "logcoeff")
    return np.exp(logcoeff[mesh.elements].mean(axis=1))


def assemble_stiffness(mesh, logcoeff):
    """Neumann stiffness matrix for ``-div(exp(u) grad .)``."""
    coeff = element_coefficient(mesh, logcoeff)
    return _scatter(mesh, coeff[:, None, None] * mesh.unit_stiffness)


def assemble_load(mesh, values):
    """Load vector of a source given by its nodal values (exact for P1 sources)."""
    values = np.broadcast_to(np.asarray(values, dtype=float), (mesh.n,))
    return assemble_mass(mesh) @ values


def lumped_mass_sqrt(mass):
    """Diagonal ``diag(M_11^(1/2), ..., M_nn^(1/2))`` as a sparse matrix."""
    return sp.diags(np.sqrt(mass.diagonal()))


def element_gradients(mesh, u):
    """Constant gradient of the P1 interpolant of ``u`` on each element, (E, 2)."""
    return np.einsum("ea,eai->ei", u[mesh.elements], mesh.grads)


def scatter_vector(mesh, local):
    """Sum per-element vectors ``local`` (E, 3) into a nodal vector."""
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n)


class DirichletSolver:
    """Factorized stiffness operator with homogeneous Dirichlet conditions.

    Boundary rows and columns are eliminated; the reduced interior system
    is factorized once and reused for every right-hand side.
    """

    def __init__(self, stiffness, mesh):
        self.mesh = mesh
        inner = mesh.interior_nodes
        self.reduced = stiffness[inner][:, inner].tocsc()
        self.ndof = inner.size
        self._band = None
        if self.ndof <= DIRECT_SOLVE_LIMIT:
            self._lu = spla.splu(self.reduced)
        else:
            self._lu = None
            diag = self.reduced.diagonal()
            self._jacobi = spla.LinearOperator(
                self.reduced.shape, matvec=lambda x: x / diag
            )

    @classmethod
    def from_logcoeff(cls, mesh, logcoeff):
        """Factorize ``-div(exp(u) grad .)`` directly in band form (banded Cholesky)."""
        if mesh.interior_nodes.size > DIRECT_SOLVE_LIMIT:
            return cls(assemble_stiffness(mesh, logcoeff), mesh)
        mask, index, shape = mesh.band_scatter
        coeff = element_coefficient(mesh, logcoeff)
        local = (coeff[:, None, None] * mesh.unit_stiffness).ravel()[mask]
        band = np.bincount(index, weights=local, minlength=shape[0] * shape[1]).reshape(shape)
        self = cls.__new__(cls)
        self.mesh = mesh
        self.ndof = shape[1]
        self._lu = None
        self._band = band
        try:
            self._chol = sla.cholesky_banded(band, check_finite=False)
        except sla.LinAlgError as exc:
            raise NumericalFailure(f"stiffness not positive definite: {exc}") from exc
        return self

    def _matvec(self, x):
        if self._band is None:
            return self.reduced @ x
        band = self._band
        bw = band.shape[0] - 1
        y = band[bw][:, None] * x if x.ndim == 2 else band[bw] * x
        for k in range(1, bw + 1):
            d = band[bw - k, k:]
            if x.ndim == 2:
                d = d[:, None]
            y[:-k] += d * x[k:]
            y[k:] += d * x[:-k]
        return y

    def solve(self, rhs):
        """Solve for the field with zero boundary values.

        ``rhs`` is a load vector of length n, or an (n, k) block of them.
        """
        rhs = np.asarray(rhs, dtype=float)
        b = rhs[self.mesh.interior_nodes]
        out = np.zeros(rhs.shape)
        bnorm = np.linalg.norm(b, axis=0)
        if not np.any(bnorm):
            return out
        if self._band is not None:
            x = sla.cho_solve_banded((self._chol, False), b, check_finite=False)
        elif self._lu is not None:
            x = self._lu.solve(b)
        elif b.ndim == 1:
            x = self._cg(b)
        else:
            x = np.column_stack([self._cg(col) for col in b.T])
        res = np.linalg.norm(self._matvec(x) - b, axis=0) / np.where(bnorm > 0, bnorm, 1.0)
        worst = np.max(res)
        if not np.isfinite(worst) or worst > SOLVE_RTOL:
            raise NumericalFailure(f"Dirichlet solve residual {worst:.3e} exceeds {SOLVE_RTOL:g}")
        out[self.mesh.interior_nodes] = x
        return out

    def _cg(self, b):
        x, info = spla.cg(
            self.reduced, b, rtol=0.1 * SOLVE_RTOL, maxiter=10 * self.ndof, M=self._jacobi
        )
        if info != 0:
            res = np.linalg.norm(self.reduced @ x - b) / np.linalg.norm(b)
            raise NumericalFailure(f"CG did not converge (relative residual {res:.3e})")
        return x


def solve_dirichlet(stiffness, rhs, mesh):
    return DirichletSolver(stiffness, mesh).solve(rhs)


def write_field(path, coeffs, ng):
    """Write a field in the binary ``SFLD0001`` format."""
    coeffs = np.asarray(coeffs, dtype="<f8")
    if coeffs.shape != ((ng + 1) ** 2,):
        raise ValueError(f"field of length {coeffs.size} does not match ng={ng}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("field contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", ng, coeffs.size))
        fh.write(coeffs.tobytes())


def read_field(path):
    """Read a ``SFLD0001`` field file; returns ``(coeffs, ng)``."""
    data = Path(path).read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a field file (bad magic)")
    ng, count = struct.unpack("<II", data[8:16])
    if count != (ng + 1) ** 2 or len(data) != 16 + 8 * count:
        raise ValueError(f"{path}: inconsistent header (ng={ng}, count={count})")
    return np.frombuffer(data[16:], dtype="<f8").astype(float), ng
