"""Config-driven problem construction and the engines behind the CLI."""
import json
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import outputs
from .baselines import laplace_sample, map_gradient_descent, map_newton_cg, objective, pcn
from .exceptions import ConfigError
from .fem import build_mesh, read_field, write_field
from .kernels import build_preconditioner
from .models import (
    TRUTH_FIELDS,
    DarcyModel,
    LinearGaussianModel,
    MeasurementSetup,
    grid_points,
    synthesize,
)
from .parallel import Mapper
from .prior import build_prior
from .stats import StatsSummary, covariance_function, discrepancy_table
from .svgd import DIAGNOSTIC_FIELDS, SvgdSettings
from .svgd import run as svgd_run


class Problem:
    """Mesh, prior and (data-free) forward model described by a config."""

    def __init__(self, cfg):
        self.cfg = cfg
        mc = cfg["model"]
        self.mesh = build_mesh(cfg["mesh"]["ng"])
        self.prior = build_prior(self.mesh, cfg["prior"]["alpha"],
                                 self._field_or_constant(cfg["prior"]["mean"], "prior.mean"))
        self.points = grid_points(mc["obs_grid"])
        meas = MeasurementSetup.build(self.mesh, self.points, mc["delta"], 1.0)
        if mc["kind"] == "darcy":
            self.model = DarcyModel(self.mesh, meas, source=mc["source"])
        else:
            design = meas.functionals.toarray()
            self.model = LinearGaussianModel(design, 1.0, np.zeros(len(self.points)), self.prior)

    def _field_or_constant(self, value, key):
        if value == "zero":
            value = 0.0
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return np.full(self.mesh.n, float(value))
        path = Path(str(value))
        if path.suffix == ".sfld" and path.exists():
            u, ng = read_field(path)
            if ng != self.mesh.ng:
                raise ConfigError(f"{key}: field file has ng={ng}, mesh has ng={self.mesh.ng}")
            return u
        raise ConfigError(f"{key}: expected a number or an existing .sfld file, got {value!r}")

    def truth(self):
        name = self.cfg["model"]["truth"]
        if name in TRUTH_FIELDS:
            return TRUTH_FIELDS[name](self.mesh.nodes[:, 0], self.mesh.nodes[:, 1])
        try:
            return self._field_or_constant(name, "model.truth")
        except ConfigError:
            raise ConfigError(
                f"model.truth {name!r} is neither a built-in field {sorted(TRUTH_FIELDS)} "
                "nor an existing .sfld file"
            ) from None

    def synthesize(self):
        """``(data, clean, sigma)`` with the configured noise level and seed."""
        mc = self.cfg["model"]
        return synthesize(self.model, self.truth(), mc["sigma_rule"], mc["noise_seed"])

    def with_data(self, data, sigma):
        return self.model.with_data(data, sigma)

    def observed_model(self):
        """The model carrying data from ``model.data`` (or synthesized in memory)."""
        src = self.cfg["model"]["data"]
        if src is None:
            data, _, sigma = self.synthesize()
        else:
            data, sigma = load_data(src)
            if data.shape != (len(self.points),):
                raise ConfigError(f"{src}: {data.size} observations, config expects {len(self.points)}")
        return self.with_data(data, sigma)


def load_data(directory):
    directory = Path(directory)
    try:
        rows = outputs.read_csv(directory / "observations.csv")
        meta = json.loads((directory / "synthesis.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load data from {directory}: {exc}") from exc
    return np.array([float(r["value"]) for r in rows]), float(meta["sigma"])


def _metadata(cfg, command, started, t0, workers, extra=None):
    rec = {
        "command": command,
        "config": cfg,
        "seeds": {
            "noise": cfg["model"]["noise_seed"],
            "prior": cfg["prior"]["seed"],
            "svgd": cfg["svgd"]["seed"],
            "pcn": cfg["pcn"]["seed"],
        },
        "version": outputs.version_string(),
        "started_at": started,
        "wall_clock_seconds": time.perf_counter() - t0,
        "workers": workers,
    }
    rec.update(extra or {})
    return rec


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def synthesize_to(cfg, outdir):
    started, t0 = _now(), time.perf_counter()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    prob = Problem(cfg)
    data, clean, sigma = prob.synthesize()
    pts = prob.points
    outputs.write_csv(outdir / "observations.csv", ("index", "x", "y", "value"),
                      ((i, pts[i, 0], pts[i, 1], data[i]) for i in range(len(data))))
    outputs.write_csv(outdir / "clean.csv", ("index", "x", "y", "value"),
                      ((i, pts[i, 0], pts[i, 1], clean[i]) for i in range(len(clean))))
    write_field(outdir / "truth.sfld", prob.truth(), prob.mesh.ng)
    outputs.write_metadata(outdir / "synthesis.json", {
        "sigma": sigma,
        "sigma_rule": cfg["model"]["sigma_rule"],
        "noise_seed": cfg["model"]["noise_seed"],
        "truth": cfg["model"]["truth"],
        "max_abs_clean": float(np.max(np.abs(clean))),
    })
    outputs.write_metadata(outdir / "metadata.json",
                           _metadata(cfg, "synthesize", started, t0, 1, {"sigma": sigma}))
    return sigma


def initial_particles(cfg, prob, model):
    sc = cfg["svgd"]
    if sc["init"] == "prior":
        return prob.prior.sample(cfg["prior"]["seed"], sc["m"]), None
    res = map_newton_cg(model, prob.prior, max_newton=cfg["map"]["max_newton"],
                        cg_rule=cfg["map"]["cg_rule"], full_hessian=cfg["map"]["full_hessian"])
    pre = build_preconditioner(model, prob.prior, res.u)
    return laplace_sample(res.u, pre, sc["m"], sc["seed"]), res


def svgd_settings(cfg):
    sc, kc = cfg["svgd"], cfg["kernel"]
    return SvgdSettings(
        algorithm=cfg["run"]["algorithm"],
        iters=sc["iters"],
        eps=sc["eps"],
        h=kc["h"],
        s=kc["s"],
        norm_order=kc["norm_order"],
        tol=sc["tol"],
        backtrack=sc["backtrack"],
        refresh_every=cfg["precond"]["refresh_every"],
        rank=cfg["precond"]["rank"],
    )


def run_to(cfg, outdir, workers=1):
    """Run the configured engine and write its outputs to ``outdir``."""
    started, t0 = _now(), time.perf_counter()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    prob = Problem(cfg)
    model = prob.observed_model()
    algo = cfg["run"]["algorithm"]
    lags = cfg["output"]["lags"]
    mesh, prior = prob.mesh, prob.prior
    extra = {"algorithm": algo}
    if algo in ("plain", "mpo"):
        init, map_res = initial_particles(cfg, prob, model)
        ens = svgd_run(model, prior, init, svgd_settings(cfg), mapper=Mapper(workers))
        outputs.write_diagnostics(outdir / "diagnostics.csv", ens.diagnostics, DIAGNOSTIC_FIELDS)
        outputs.write_fields(outdir / "particles", ens.particles, mesh.ng, "particle")
        write_field(outdir / "mean.sfld", ens.particles.mean(axis=0), mesh.ng)
        if ens.m >= 2:
            outputs.write_stats(outdir, mesh, ens.particles, [k for k in lags if k < mesh.n])
        extra.update(iterations=ens.iteration,
                     map_iterations=None if map_res is None else map_res.iterations)
    elif algo == "pcn":
        pc = cfg["pcn"]
        start = None
        if pc["init"] == "map":
            start = map_newton_cg(model, prior, max_newton=cfg["map"]["max_newton"],
                                  cg_rule=cfg["map"]["cg_rule"]).u
        chain = pcn(model, prior, beta=pc["beta"], n_iter=pc["iters"], burn_in=pc["burn_in"],
                    thin=pc["thin"], seed=pc["seed"], init=start)
        outputs.write_csv(outdir / "diagnostics.csv", ("iteration", "acceptance_rate", "potential"),
                          chain.trace)
        write_field(outdir / "mean.sfld", chain.mean, mesh.ng)
        outputs.write_variance(outdir / "variance.csv", mesh, chain.variance)
        if len(chain.samples):
            outputs.write_fields(outdir / "samples", chain.samples, mesh.ng, "sample")
        if len(chain.samples) >= 2:
            for k in lags:
                if k < mesh.n:
                    outputs.write_covariance(outdir / f"covariance_lag{k}.csv",
                                             covariance_function(chain.samples, k))
        extra.update(acceptance_rate=chain.acceptance_rate, stored_samples=len(chain.samples))
    else:
        if algo == "map":
            res = map_newton_cg(model, prior, max_newton=cfg["map"]["max_newton"],
                                cg_rule=cfg["map"]["cg_rule"],
                                full_hessian=cfg["map"]["full_hessian"])
        else:
            res = map_gradient_descent(model, prior, max_iters=cfg["map"]["gd_iters"])
        outputs.write_csv(outdir / "diagnostics.csv", ("iteration", "objective", "grad_norm"),
                          ((i, v, g) for i, (v, g) in enumerate(zip(res.values, res.grad_norms))))
        write_field(outdir / "map.sfld", res.u, mesh.ng)
        extra.update(iterations=res.iterations, converged=res.converged,
                     line_search_failed=res.line_search_failed,
                     final_objective=objective(model, prior, res.u))
    outputs.write_metadata(outdir / "metadata.json",
                           _metadata(cfg, "run", started, t0, workers, extra))
    return outdir


def _samples_of(result_dir):
    result_dir = Path(result_dir)
    for sub in ("particles", "samples"):
        if (result_dir / sub).is_dir():
            return outputs.read_fields(result_dir / sub)
    return outputs.read_fields(result_dir)


def stats_to(result_dir, outdir=None, reference=None, lags=(1,)):
    """Recompute stats from a result directory's fields; optionally compare to a reference."""
    samples, ng = _samples_of(result_dir)
    mesh = build_mesh(ng)
    outdir = Path(outdir or result_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    lags = [k for k in lags if k < mesh.n]
    outputs.write_stats(outdir, mesh, samples, lags)
    rows = None
    if reference is not None:
        ref_samples, ref_ng = _samples_of(reference)
        if ref_ng != ng:
            raise ConfigError(f"reference fields have ng={ref_ng}, samples have ng={ng}")
        rows = discrepancy_table(StatsSummary.from_samples(samples, lags),
                                 StatsSummary.from_samples(ref_samples, lags))
        outputs.write_csv(outdir / "discrepancy.csv", ("statistic", "lag", "value"), rows)
    return rows
