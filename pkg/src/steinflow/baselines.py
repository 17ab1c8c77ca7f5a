"""Reference algorithms: pCN, Newton-CG and gradient-descent MAP, Laplace sampling."""
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalFailure
from .stats import StreamingMoments

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 30


# pCN ----------------------------------------------------------------------

@dataclass
class PcnChainStats:
    mean: np.ndarray
    variance: np.ndarray  # 1/N over the post-burn-in states
    samples: np.ndarray  # thinned store, (floor((length - burn_in) / thin), n)
    acceptance_rate: float
    length: int
    burn_in: int
    thin: int
    final_state: np.ndarray = field(repr=False, default=None)
    trace: list = field(repr=False, default_factory=list)  # (iteration, acceptance, Phi)


def pcn(model, prior, beta=0.1, n_iter=10000, burn_in=0, thin=100, seed=0, init=None,
        block=1024):
    """Preconditioned Crank-Nicolson Metropolis chain.

    Proposal ``v = u0 + sqrt(1 - beta^2)(u - u0) + beta xi``, ``xi ~ N(0, C0)``,
    accepted with probability ``min(1, exp(Phi(u) - Phi(v)))``.  Mean and
    variance accumulate over every state after ``burn_in`` (repeats
    included); every ``thin``-th of those states is stored.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta!r}")
    if n_iter < 0 or not 0 <= burn_in <= n_iter or thin < 1:
        raise ValueError("need n_iter >= 0, 0 <= burn_in <= n_iter and thin >= 1")
    rng = np.random.default_rng(seed)
    u0 = prior.mean
    u = u0.copy() if init is None else prior.mesh.check_field(init, "init").copy()
    phi = model.potential(u)
    keep = np.sqrt(1.0 - beta * beta)
    moments = StreamingMoments(prior.n)
    store = []
    trace = []
    accepted = 0
    done = 0
    while done < n_iter:
        b = min(block, n_iter - done)
        xi = prior.field(rng.standard_normal((b, prior.n)) / prior.eigvals)
        logu = np.log(rng.random(b))
        for k in range(b):
            v = u0 + keep * (u - u0) + beta * xi[k]
            phi_v = model.potential(v)
            if logu[k] < phi - phi_v:
                u, phi = v, phi_v
                accepted += 1
            done += 1
            if done > burn_in:
                moments.push(u)
                if (done - burn_in) % thin == 0:
                    store.append(u.copy())
            if done % thin == 0:
                trace.append((done, accepted / done, phi))
    return PcnChainStats(
        mean=moments.mean,
        variance=moments.variance,
        samples=np.array(store).reshape(len(store), prior.n),
        acceptance_rate=accepted / n_iter if n_iter else float("nan"),
        length=n_iter,
        burn_in=burn_in,
        thin=thin,
        final_state=u,
        trace=trace,
    )


# MAP ----------------------------------------------------------------------

def objective(model, prior, u):
    """``V(u) = Phi(u) + 1/2 ||u - u0||^2_{H^1}``."""
    return float(model.potential(u)) + 0.5 * prior.cameron_martin_sq(u)


def _trial_objective(model, prior, u):
    """V at a line-search trial point; unusable points count as +inf."""
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            val = objective(model, prior, u)
        except NumericalFailure:
            return np.inf
    return val if np.isfinite(val) else np.inf


def _value_and_grad(model, prior, u):
    """V and the coordinates of its M-Riesz gradient ``M^-1 DPhi + C0^-1 (u - u0)``."""
    lin = model.linearize(u)
    g = prior.dual_coords(lin.gradient()) + prior.eigvals**2 * prior.coords(u - prior.mean)
    return float(lin.potential) + 0.5 * prior.cameron_martin_sq(u), g, lin


@dataclass
class MapResult:
    u: np.ndarray
    values: list  # V at every iterate, starting with the initial point
    grad_norms: list
    iterations: int
    converged: bool
    line_search_failed: bool = False
    cg_iterations: list = field(default_factory=list)


def _pcg(apply_h, rhs, prec_diag, rtol, maxiter):
    """Preconditioned CG in coordinates with a diagonal preconditioner.

    Stops at ``||r|| <= rtol ||rhs||`` or on nonpositive curvature (then
    returns the current iterate, or the preconditioned rhs if that
    happens at the first iteration).
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = prec_diag * r
    p = z.copy()
    rz = r @ z
    target = rtol * np.linalg.norm(rhs)
    for it in range(1, maxiter + 1):
        hp = apply_h(p)
        curv = p @ hp
        if curv <= 0:
            return (z if it == 1 else x), it
        a = rz / curv
        x += a * p
        r -= a * hp
        if np.linalg.norm(r) <= target:
            return x, it
        z = prec_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter


def _hessian_coords_op(model, prior, lin, full):
    v = prior.eigvecs
    lam2 = prior.eigvals**2
    act = lin.full_hessian_action if full else lin.gn_hessian_action

    def apply_h(x):
        return v.T @ act(v @ x) + lam2 * x

    return apply_h


def newton_direction(model, prior, u, rtol=1e-12, full_hessian=False, lin=None, grad=None):
    """Solve ``(H + C0^-1) d = -(M^-1 DPhi + C0^-1 (u - u0))`` by C0-preconditioned CG."""
    if lin is None or grad is None:
        _, grad, lin = _value_and_grad(model, prior, u)
    apply_h = _hessian_coords_op(model, prior, lin, full_hessian)
    d, _ = _pcg(apply_h, -grad, prior.eigvals**-2.0, rtol, 4 * prior.n)
    return prior.field(d)


def _forcing(rule, gnorm, g0norm):
    if rule == "ew":
        return min(0.5, np.sqrt(gnorm / g0norm))
    if rule == "exact":
        return 1e-12
    return float(rule)


def map_newton_cg(model, prior, u_init=None, max_newton=20, cg_rule="ew", gtol=1e-9,
                  full_hessian=False):
    """Inexact Newton-CG for the MAP point with Armijo backtracking.

    ``cg_rule`` is ``"ew"`` (forcing ``min(0.5, sqrt(||g|| / ||g0||))``),
    ``"exact"`` or a constant relative tolerance.  Stops when the gradient
    norm falls below ``gtol`` times its initial value.
    """
    u = prior.mean.copy() if u_init is None else prior.mesh.check_field(u_init, "u_init").copy()
    val, g, lin = _value_and_grad(model, prior, u)
    g0 = np.linalg.norm(g)
    res = MapResult(u, [val], [g0], 0, g0 == 0.0)
    apply_scale = prior.eigvals**-2.0
    for it in range(max_newton):
        gnorm = res.grad_norms[-1]
        if gnorm <= gtol * g0 or gnorm == 0.0:
            res.converged = True
            break
        apply_h = _hessian_coords_op(model, prior, lin, full_hessian)
        d, ncg = _pcg(apply_h, -g, apply_scale, _forcing(cg_rule, gnorm, g0), 4 * prior.n)
        res.cg_iterations.append(ncg)
        slope = float(g @ d)
        if slope >= 0:  # not a descent direction; fall back to preconditioned gradient
            d = -apply_scale * g
            slope = float(g @ d)
        if -slope <= 64 * np.finfo(float).eps * max(1.0, abs(val)):
            # predicted decrease is below the resolution of V: nothing left to gain
            res.converged = True
            break
        dfield = prior.field(d)
        alpha = 1.0
        for _ in range(MAX_HALVINGS):
            trial = u + alpha * dfield
            tval = _trial_objective(model, prior, trial)
            if tval <= val + ARMIJO_C * alpha * slope:
                break
            alpha *= 0.5
        else:
            log.warning("Newton line search failed after %d halvings", MAX_HALVINGS)
            res.line_search_failed = True
            break
        u = trial
        val, g, lin = _value_and_grad(model, prior, u)
        res.u = u
        res.values.append(val)
        res.grad_norms.append(float(np.linalg.norm(g)))
        res.iterations = it + 1
    else:
        res.converged = res.grad_norms[-1] <= gtol * g0
    return res


def map_gradient_descent(model, prior, u_init=None, max_iters=1000, gtol=1e-9):
    """Steepest descent on V (L2 gradient) with Armijo backtracking.

    Each line search starts from twice the previously accepted step.
    """
    u = prior.mean.copy() if u_init is None else prior.mesh.check_field(u_init, "u_init").copy()
    val, g, _ = _value_and_grad(model, prior, u)
    g0 = np.linalg.norm(g)
    res = MapResult(u, [val], [g0], 0, g0 == 0.0)
    alpha = 1.0
    for it in range(max_iters):
        if res.grad_norms[-1] <= gtol * g0 or res.grad_norms[-1] == 0.0:
            res.converged = True
            break
        slope = -float(g @ g)
        dfield = prior.field(-g)
        alpha = min(2.0 * alpha, 1.0)
        for _ in range(MAX_HALVINGS):
            trial = u + alpha * dfield
            tval = _trial_objective(model, prior, trial)
            if tval <= val + ARMIJO_C * alpha * slope:
                break
            alpha *= 0.5
        else:
            log.warning("gradient-descent line search failed after %d halvings", MAX_HALVINGS)
            res.line_search_failed = True
            break
        u = trial
        val, g, _ = _value_and_grad(model, prior, u)
        res.u = u
        res.values.append(val)
        res.grad_norms.append(float(np.linalg.norm(g)))
        res.iterations = it + 1
    return res


def laplace_sample(map_point, prec, count, seed):
    """Draws from ``N(u_MAP, B^-1)`` with B the preconditioner built at the MAP point."""
    return prec.sample(map_point, count, seed)
