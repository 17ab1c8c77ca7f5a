"""Particle updates: plain iSVGD and iSVGD with mixture preconditioning (MPO).

Particles are the rows of an (m, n) array of nodal fields.  Directions are
assembled in prior coordinates and returned as nodal fields.

Plain iSVGD uses the scalar kernel ``exp(-||u - u'||_t^2 / h)`` and the
empirical direction

    phi(u_i) = (1/m) sum_j [ K_ji (-grad V(u_j)) + (2/h) K_ji G (u_i - u_j) ],

where ``grad V = M^-1 DPhi + C0^-1 (u - u0)`` and ``G = C0^-t``.

The MPO direction follows the expanded mixture formula with anchors equal
to the particles (no 1/m factor, so that one particle gives exactly the
Newton step).  Writing ``S_l = C0^-s T_l^* T_l`` and ``W[l, j] = w_l(u_j)``,

    phi(u_i) = sum_l W[l,i] B_l^-1 sum_j W[l,j] k_l(u_j, u_i) [
                   -grad V(u_j) + sum_l' W[l',j] S_l' (u_j - v_l')
                   - S_l (u_j - v_l) + (2/h) S_l (u_i - u_j) ],

with ``k_l(u, u') = exp(-||T_l (u - u')||^2 / h)``.  The two middle terms
are the exact derivative of the softmax weights.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import NumericalFailure
from .kernels import Preconditioner, median_bandwidth, pairwise_sq, truncate_gn
from .parallel import SERIAL

DIAGNOSTIC_FIELDS = ("iteration", "s", "h", "max_update_norm", "mean_potential", "var_norm_ratio")


@dataclass
class Ensemble:
    particles: np.ndarray
    iteration: int = 0
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if self.particles.shape[0] < 1:
            raise ValueError("an ensemble needs at least one particle")

    @property
    def m(self):
        return self.particles.shape[0]

    def variance(self):
        """Nodal variance with 1/m normalization."""
        return np.var(self.particles, axis=0)


def adaptive_s(var_now_norm, var0_norm):
    """``0.5 (1 - ||var|| / ||var0||)`` clamped to [0, 0.5]."""
    if not var0_norm > 0:
        raise ValueError(f"initial variance norm must be positive, got {var0_norm!r}")
    return float(np.clip(0.5 * (1.0 - var_now_norm / var0_norm), 0.0, 0.5))


@dataclass
class SPolicy:
    """Fixed ``s`` or the adaptive rule driven by the ensemble variance."""

    mode: str = "adaptive"
    value: float = 0.0
    var0_norm: float = None

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown s mode {self.mode!r}")
        if self.mode == "fixed" and not 0.0 <= self.value <= 0.5:
            raise ValueError(f"s must lie in [0, 0.5], got {self.value}")

    @classmethod
    def parse(cls, value):
        if value == "adaptive":
            return cls("adaptive")
        return cls("fixed", float(value))

    def resolve(self, var_norm):
        if self.mode == "fixed":
            return self.value
        if self.var0_norm is None:
            self.var0_norm = var_norm
        return adaptive_s(var_norm, self.var0_norm)


# gradients -----------------------------------------------------------------

@dataclass
class ParticleEval:
    potential: float
    grad_coords: np.ndarray  # coordinates of M^-1 DPhi + C0^-1 (u - u0)
    gn_coords: np.ndarray = None


def evaluate_particle(model, prior, u, with_gn=False, rank="dense"):
    """Potential, coordinate gradient of V and (optionally) the GN Hessian at ``u``."""
    lin = model.linearize(u)
    pot = float(lin.potential)
    g = prior.dual_coords(lin.gradient())
    g = g + prior.eigvals**2 * prior.coords(np.asarray(u) - prior.mean)
    if not np.isfinite(pot) or not np.all(np.isfinite(g)):
        raise NumericalFailure("non-finite potential or gradient")
    gn = None
    if with_gn:
        jv = lin.jacobian() @ prior.eigvecs
        gn = jv.T @ jv / model.sigma**2
        if rank != "dense":
            gn = truncate_gn(gn, prior, rank)
    return ParticleEval(pot, g, gn)


def evaluate(model, prior, particles, mapper=SERIAL, with_gn=False, rank="dense"):
    def one(u):
        return evaluate_particle(model, prior, u, with_gn, rank)

    out = []
    for i, ev in enumerate(mapper(_guard(one), particles)):
        if isinstance(ev, Exception):
            raise NumericalFailure(f"particle {i}: {ev}") from ev
        out.append(ev)
    return out


def _guard(fn):
    def wrapped(x):
        try:
            return fn(x)
        except (NumericalFailure, np.linalg.LinAlgError) as exc:
            return exc
    return wrapped


# directions ----------------------------------------------------------------

def _resolve_h(h, sq, m):
    if h == "median":
        iu = np.triu_indices(sq.shape[-1], 1)
        return median_bandwidth(sq[..., iu[0], iu[1]], m)
    return float(h)


def plain_direction_coords(coords, grad_coords, prior, h="median", t=0.0):
    """Plain iSVGD direction in prior coordinates; returns ``(phi, h)``."""
    m = coords.shape[0]
    wt = prior.eigvals**t
    sq = pairwise_sq(coords * wt)
    h = _resolve_h(h, sq, m)
    k = np.exp(-sq / h)  # symmetric
    gc = coords * wt**2  # G applied to each particle
    attract = -(k @ grad_coords)
    repulse = (2.0 / h) * (k.sum(axis=1)[:, None] * gc - k @ gc)
    return (attract + repulse) / m, h


def plain_direction(particles, model, prior, h="median", t=0.0, evals=None, mapper=SERIAL):
    """Plain iSVGD directions at every particle; returns ``(fields, h)``."""
    particles = np.atleast_2d(particles)
    if evals is None:
        evals = evaluate(model, prior, particles, mapper)
    grads = np.array([e.grad_coords for e in evals])
    phi, h = plain_direction_coords(prior.coords(particles), grads, prior, h, t)
    _check_finite(phi)
    return prior.field(phi), h


def mixture_weights(tcoords, tanchor):
    """``W[l, j] = w_l(u_j)`` from T_l-images; log-sum-exp over anchors l."""
    logits = -0.5 * np.sum((tcoords - tanchor[:, None, :]) ** 2, axis=2)
    return np.exp(logits - logsumexp(logits, axis=0, keepdims=True))


def mpo_direction_coords(coords, grad_coords, precs, s, h="median"):
    """MPO direction in prior coordinates; returns ``(phi, h, weights)``."""
    m, n = coords.shape
    L = len(precs)
    anchors = np.array([p.prior.coords(p.anchor) for p in precs])
    tmats = [p.t_matrix(s) for p in precs]
    lam2s = precs[0].prior.eigvals ** (2.0 * s)
    # T_l u_j for every anchor/particle pair, (L, m, n)
    tco = np.stack([coords @ a.T for a in tmats])
    tanc = np.stack([a @ v for a, v in zip(tmats, anchors)])
    weights = mixture_weights(tco, tanc)
    if not np.all(np.isfinite(weights)):
        raise NumericalFailure("non-finite mixture weights")
    sq = np.stack([pairwise_sq(y) for y in tco])  # (L, m, m)
    h = _resolve_h(h, sq, m)
    kern = np.exp(-sq / h)

    def s_apply(l, y):  # S_l from T_l-images: row-wise C0^-s T^* y
        return (y @ tmats[l]) * lam2s

    su = [s_apply(l, tco[l]) for l in range(L)]  # S_l u_j
    sa = [s_apply(l, tanc[l]) for l in range(L)]  # S_l v_l
    cross = sum(weights[l][:, None] * (su[l] - sa[l]) for l in range(L))  # (m, n)
    phi = np.zeros((m, n))
    for l in range(L):
        c = weights[l][:, None] * weights[l][None, :] * kern[l]  # c[j, i]
        src = -grad_coords + cross - (su[l] - sa[l]) - (2.0 / h) * su[l]
        acc = c.T @ src + (2.0 / h) * c.sum(axis=0)[:, None] * su[l]
        phi += acc @ precs[l].binv_coords
    return phi, h, weights


def mpo_direction(particles, model, prior, precs, s, h="median", evals=None, mapper=SERIAL):
    """MPO directions at every particle; returns ``(fields, h)``."""
    particles = np.atleast_2d(particles)
    if evals is None:
        evals = evaluate(model, prior, particles, mapper)
    grads = np.array([e.grad_coords for e in evals])
    phi, h, _ = mpo_direction_coords(prior.coords(particles), grads, precs, s, h)
    _check_finite(phi)
    return prior.field(phi), h


def _check_finite(phi):
    bad = np.flatnonzero(~np.all(np.isfinite(phi), axis=1))
    if bad.size:
        raise NumericalFailure(f"non-finite direction at particle {bad[0]}")


def step(ens, directions, eps, prior=None, record=None):
    """Synchronous update ``u_i <- u_i + eps phi_i``; appends one diagnostics record.

    ``record`` supplies the other diagnostic columns; the max update norm
    is computed here (M-weighted L2 norm, or Euclidean without a prior).
    """
    if not eps >= 0:
        raise ValueError(f"step size must be nonnegative, got {eps!r}")
    update = eps * np.asarray(directions)
    new = ens.particles + update
    if not np.all(np.isfinite(new)):
        raise NumericalFailure("non-finite particles after step")
    if prior is None:
        norms = np.linalg.norm(update, axis=1)
    else:
        norms = np.linalg.norm(prior.coords(update), axis=1)
    rec = dict(record or {})
    rec["iteration"] = ens.iteration + 1
    rec["max_update_norm"] = float(norms.max())
    return Ensemble(new, ens.iteration + 1, ens.diagnostics + [rec])


# driver --------------------------------------------------------------------

@dataclass
class SvgdSettings:
    algorithm: str = "mpo"
    iters: int = 30
    eps: float = None  # None: 1.0 for mpo, 0.5 / lambda_max^2 for plain
    h: object = "median"
    s: object = "adaptive"
    norm_order: float = 0.0  # plain kernel distance norm
    tol: float = 1e-6
    backtrack: bool = True
    refresh_every: int = 1
    rank: object = "dense"

    def __post_init__(self):
        if self.algorithm not in ("plain", "mpo"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")

    def resolved_eps(self, prior):
        if self.eps is not None:
            return float(self.eps)
        return 1.0 if self.algorithm == "mpo" else 0.5 / prior.eigvals.max() ** 2


MAX_HALVINGS = 20
BACKTRACK_FACTOR = 1.5


def run(model, prior, init, settings=None, mapper=SERIAL, callback=None):
    """Iterate the chosen update from ``init`` (an (m, n) array).

    Returns the final :class:`Ensemble`; its ``diagnostics`` hold one
    record per iteration.  On failure the exception carries the partial
    ensemble as ``exc.ensemble``.
    """
    settings = settings or SvgdSettings()
    policy = SPolicy.parse(settings.s) if settings.algorithm == "mpo" else SPolicy("fixed", 0.0)
    ens = Ensemble(np.array(init, dtype=float))
    eps0 = settings.resolved_eps(prior)
    var0 = float(np.linalg.norm(ens.variance()))
    mpo = settings.algorithm == "mpo"
    precs = None
    evals = None
    try:
        for it in range(settings.iters):
            refresh = mpo and (precs is None or it % settings.refresh_every == 0)
            if evals is None or (refresh and evals[0].gn_coords is None):
                evals = evaluate(model, prior, ens.particles, mapper, with_gn=refresh,
                                 rank=settings.rank)
            if refresh:
                precs = [Preconditioner(prior, u, e.gn_coords)
                         for u, e in zip(ens.particles, evals)]
            var_norm = float(np.linalg.norm(ens.variance()))
            s = policy.resolve(var_norm) if mpo else 0.0
            coords = prior.coords(ens.particles)
            grads = np.array([e.grad_coords for e in evals])
            if mpo:
                phi, h, _ = mpo_direction_coords(coords, grads, precs, s, settings.h)
            else:
                phi, h = plain_direction_coords(coords, grads, prior, settings.h,
                                                settings.norm_order)
            _check_finite(phi)
            directions = prior.field(phi)
            mean_pot = float(np.mean([e.potential for e in evals]))
            eps = eps0
            for _ in range(MAX_HALVINGS + 1):
                trial = ens.particles + eps * directions
                try:
                    new_evals = evaluate(model, prior, trial, mapper, with_gn=False)
                    new_mean = float(np.mean([e.potential for e in new_evals]))
                    ok = np.isfinite(new_mean)
                except NumericalFailure:
                    ok = False
                if ok and (not settings.backtrack or new_mean <= BACKTRACK_FACTOR * max(mean_pot, 1e-300)):
                    break
                if not settings.backtrack:
                    raise NumericalFailure("step produced an unusable ensemble")
                eps *= 0.5
            else:
                raise NumericalFailure(f"backtracking failed after {MAX_HALVINGS} halvings")
            record = {
                "s": s,
                "h": h,
                "mean_potential": new_mean,
                "var_norm_ratio": (float(np.linalg.norm(np.var(trial, axis=0))) / var0
                                   if var0 > 0 else float("nan")),
                "eps": eps,
            }
            ens = step(ens, directions, eps, prior, record)
            evals = new_evals
            if callback is not None:
                callback(ens)
            if ens.diagnostics[-1]["max_update_norm"] < settings.tol:
                break
    except Exception as exc:
        exc.ensemble = ens
        raise
    return ens
