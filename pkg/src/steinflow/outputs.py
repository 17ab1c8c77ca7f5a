"""Tidy CSV, field-directory and metadata writers for run outputs.

Floats are written with ``repr`` (shortest round-tripping form), so files
produced from identical numbers are byte-identical.
"""
import csv
import json
import subprocess
from pathlib import Path

import numpy as np

from .fem import read_field, write_field
from .stats import covariance_function, variance_function


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return "" if x is None else str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_cell(x) for x in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_diagnostics(path, records, fields):
    write_csv(path, fields, ([rec.get(k) for k in fields] for rec in records))


def write_variance(path, mesh, var):
    rows = ((i, mesh.nodes[i, 0], mesh.nodes[i, 1], var[i]) for i in range(mesh.n))
    write_csv(path, ("node_index", "x", "y", "value"), rows)


def write_covariance(path, cov):
    write_csv(path, ("pair_index", "value"), enumerate(cov))


def write_stats(outdir, mesh, samples, lags):
    """variance.csv and covariance_lag{k}.csv from an (N, n) sample array."""
    outdir = Path(outdir)
    var = variance_function(samples)
    write_variance(outdir / "variance.csv", mesh, var)
    covs = {}
    for k in lags:
        covs[k] = covariance_function(samples, k)
        write_covariance(outdir / f"covariance_lag{k}.csv", covs[k])
    return var, covs


def write_fields(directory, fields, ng, prefix):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(fields) - 1)))
    for i, u in enumerate(fields):
        write_field(directory / f"{prefix}_{i:0{width}d}.sfld", u, ng)


def read_fields(directory):
    """All ``*.sfld`` files in a directory, sorted by name; returns ``(array, ng)``."""
    files = sorted(Path(directory).glob("*.sfld"))
    if not files:
        raise FileNotFoundError(f"no .sfld field files in {directory}")
    out, ngs = [], set()
    for f in files:
        u, ng = read_field(f)
        out.append(u)
        ngs.add(ng)
    if len(ngs) != 1:
        raise ValueError(f"{directory}: fields on different meshes {sorted(ngs)}")
    return np.array(out), ngs.pop()


def version_string():
    """``git describe`` of the source tree, or the package version outside a checkout."""
    from . import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=True,
        )
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def write_metadata(path, record):
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")
