"""Command-line entry point: ``steinflow {synthesize,run,verify,stats}``."""
import argparse
import json
import logging
import sys
import traceback

from .config import ConfigError, load_config, merge, parse_override
from .exceptions import NumericalFailure
from .parallel import WORKERS_ENV, default_workers

log = logging.getLogger("steinflow")

# flag -> (section, key) for `run`
_RUN_FLAGS = {
    "algorithm": ("run", "algorithm"),
    "m": ("svgd", "m"),
    "eps": ("svgd", "eps"),
    "seed": None,  # applies to the chosen engine
    "iters": None,
    "ng": ("mesh", "ng"),
    "data": ("model", "data"),
    "s": ("kernel", "s"),
}


def _overrides(args):
    out = {}
    for text in args.set or []:
        out = merge(out, parse_override(text))
    ng = getattr(args, "ng", None)
    if ng is not None:
        out = merge(out, {"mesh": {"ng": ng}})
    return out


def _run_overrides(args, base):
    out = base
    for flag, target in _RUN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is None or target is None:
            continue
        out = merge(out, {target[0]: {target[1]: val}})
    algo = args.algorithm or out.get("run", {}).get("algorithm")
    if args.iters is not None or args.seed is not None:
        # resolve the engine first so --iters/--seed land in the right section
        cfg = load_config(args.config, out)
        algo = cfg["run"]["algorithm"]
        sec, key = {"pcn": ("pcn", "iters"), "map": ("map", "max_newton"),
                    "gd": ("map", "gd_iters")}.get(algo, ("svgd", "iters"))
        if args.iters is not None:
            out = merge(out, {sec: {key: args.iters}})
        if args.seed is not None:
            out = merge(out, {"pcn" if algo == "pcn" else "svgd": {"seed": args.seed}})
    return out


def _s_value(text):
    return text if text == "adaptive" else float(text)


def build_parser():
    p = argparse.ArgumentParser(prog="steinflow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--workers", type=int, default=None,
                   help=f"threads for per-particle work (default: ${WORKERS_ENV} or CPU count)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--ng", type=int, help="mesh cells per side")

    sp = sub.add_parser("synthesize", help="write synthetic observations for the configured truth")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("run", help="run an engine (plain, mpo, pcn, map, gd)")
    common(sp)
    sp.add_argument("--algorithm", choices=["plain", "mpo", "pcn", "map", "gd"])
    sp.add_argument("--m", type=int, help="number of particles")
    sp.add_argument("--iters", type=int, help="iterations of the chosen engine")
    sp.add_argument("--eps", type=float, help="particle step size")
    sp.add_argument("--s", type=_s_value, help="kernel s (number or 'adaptive')")
    sp.add_argument("--seed", type=int, help="seed of the chosen engine")
    sp.add_argument("--data", help="directory written by `synthesize`")
    sp.add_argument("--out", help="output directory (default: output.dir)")

    sp = sub.add_parser("verify", help="gradient, Hessian and operator self-checks")
    sp.add_argument("--ng", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="also write the JSON report here")
    sp.add_argument("--debug-flip-adjoint", action="store_true",
                    help="negate the adjoint (negative control: gradient checks must fail)")

    sp = sub.add_parser("stats", help="variance/covariance CSVs and discrepancies from stored fields")
    sp.add_argument("results", help="result directory (particles/ or samples/ inside)")
    sp.add_argument("--reference", help="result directory to compare against")
    sp.add_argument("--lags", type=int, nargs="+", default=[1])
    sp.add_argument("--out", help="output directory (default: the results directory)")
    return p


def _workers(args):
    return args.workers if args.workers is not None else default_workers()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _report_error("config-error", exc, args)
        return 2
    except NumericalFailure as exc:
        _report_error("numerical-failure", exc, args)
        return 3


def _report_error(kind, exc, args):
    rec = {"error": kind, "message": str(exc), "command": args.command}
    print(json.dumps(rec), file=sys.stderr)
    if args.verbose:
        traceback.print_exc()


def _dispatch(args):
    from . import experiment

    if args.command == "synthesize":
        cfg = load_config(args.config, _overrides(args))
        sigma = experiment.synthesize_to(cfg, args.out)
        print(json.dumps({"out": args.out, "sigma": sigma}))
        return 0
    if args.command == "run":
        cfg = load_config(args.config, _run_overrides(args, _overrides(args)))
        out = args.out or cfg["output"]["dir"]
        experiment.run_to(cfg, out, workers=_workers(args))
        print(json.dumps({"out": str(out), "algorithm": cfg["run"]["algorithm"]}))
        return 0
    if args.command == "verify":
        from .verify import run_checks

        checks, table = run_checks(ng=args.ng, flip_adjoint=args.debug_flip_adjoint,
                                   seed=args.seed)
        report = {
            "passed": all(c.passed for c in checks),
            "checks": [c.as_dict() for c in checks],
            "fd_table": table,
        }
        text = json.dumps(report, indent=2)
        print(text)
        if args.out:
            from pathlib import Path

            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "verify.json").write_text(text + "\n", encoding="utf-8")
        return 0 if report["passed"] else 1
    if args.command == "stats":
        rows = experiment.stats_to(args.results, args.out, args.reference, args.lags)
        print(json.dumps({"discrepancy": rows}))
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
