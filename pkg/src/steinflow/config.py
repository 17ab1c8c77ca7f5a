"""Run configuration: namespaced YAML with defaults, validation and overrides."""
import copy
from pathlib import Path

import yaml

from .exceptions import ConfigError

DEFAULTS = {
    "mesh": {"ng": 16},
    "prior": {"alpha": 0.5, "mean": 0.0, "seed": 0},  # mean: number, "zero" or .sfld path
    "model": {
        "kind": "darcy",  # darcy | linear
        "delta": 0.02,  # mollifier width
        "obs_grid": 5,  # k x k observation points at i / (k + 1)
        "truth": "bumps",
        "source": 1.0,
        "sigma_rule": 0.01,  # sigma = sigma_rule * max |clean data|
        "noise_seed": 0,
        "data": None,  # directory written by `synthesize`; None synthesizes in memory
    },
    "kernel": {"h": "median", "s": "adaptive", "norm_order": 0.0},
    "precond": {"rank": "dense", "refresh_every": 1},
    "run": {"algorithm": "mpo"},  # plain | mpo | pcn | map | gd
    "svgd": {
        "m": 20,
        "iters": 30,
        "eps": None,
        "init": "laplace",  # prior | laplace
        "seed": 0,
        "tol": 1e-6,
        "backtrack": True,
    },
    "pcn": {"beta": 0.1, "iters": 10000, "burn_in": 1000, "thin": 100, "seed": 0,
            "init": "prior"},  # prior | map
    "map": {"max_newton": 10, "cg_rule": "ew", "full_hessian": False, "gd_iters": 1000},
    "output": {"dir": "results", "lags": [1, 17]},
}

_CHOICES = {
    ("model", "kind"): {"darcy", "linear"},
    ("run", "algorithm"): {"plain", "mpo", "pcn", "map", "gd"},
    ("svgd", "init"): {"prior", "laplace"},
    ("pcn", "init"): {"prior", "map"},
}


def _check_keys(cfg, ref, path=""):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(cfg).__name__}")
    for key, val in cfg.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in ref:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(ref[key], dict):
            _check_keys(val, ref[key], where)


def merge(base, update):
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(cfg):
    for (sec, key), allowed in _CHOICES.items():
        if cfg[sec][key] not in allowed:
            raise ConfigError(f"{sec}.{key} must be one of {sorted(allowed)}, got {cfg[sec][key]!r}")

    def positive(sec, key, integer=False):
        v = cfg[sec][key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0 or (integer and int(v) != v):
            kind = "positive integer" if integer else "positive number"
            raise ConfigError(f"{sec}.{key} must be a {kind}, got {v!r}")

    positive("mesh", "ng", integer=True)
    if cfg["mesh"]["ng"] < 2:
        raise ConfigError("mesh.ng must be >= 2")
    positive("prior", "alpha")
    positive("model", "delta")
    positive("model", "obs_grid", integer=True)
    positive("model", "sigma_rule")
    positive("svgd", "m", integer=True)
    positive("precond", "refresh_every", integer=True)
    positive("pcn", "thin", integer=True)
    for sec, key in (("svgd", "iters"), ("pcn", "iters"), ("pcn", "burn_in"),
                     ("map", "max_newton"), ("map", "gd_iters")):
        v = cfg[sec][key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"{sec}.{key} must be a nonnegative integer, got {v!r}")
    if cfg["pcn"]["burn_in"] > cfg["pcn"]["iters"]:
        raise ConfigError("pcn.burn_in exceeds pcn.iters")
    beta = cfg["pcn"]["beta"]
    if not isinstance(beta, (int, float)) or not 0 < beta <= 1:
        raise ConfigError(f"pcn.beta must lie in (0, 1], got {beta!r}")
    h = cfg["kernel"]["h"]
    if h != "median" and (isinstance(h, bool) or not isinstance(h, (int, float)) or h <= 0):
        raise ConfigError(f"kernel.h must be 'median' or a positive number, got {h!r}")
    s = cfg["kernel"]["s"]
    if s != "adaptive" and (isinstance(s, bool) or not isinstance(s, (int, float)) or not 0 <= s <= 0.5):
        raise ConfigError(f"kernel.s must be 'adaptive' or a number in [0, 0.5], got {s!r}")
    rank = cfg["precond"]["rank"]
    if rank != "dense" and (isinstance(rank, bool) or not isinstance(rank, int) or rank < 0):
        raise ConfigError(f"precond.rank must be 'dense' or a nonnegative integer, got {rank!r}")
    eps = cfg["svgd"]["eps"]
    if eps is not None and (isinstance(eps, bool) or not isinstance(eps, (int, float)) or eps <= 0):
        raise ConfigError(f"svgd.eps must be positive or null, got {eps!r}")
    rule = cfg["map"]["cg_rule"]
    if rule not in ("ew", "exact") and not (isinstance(rule, float) and 0 < rule < 1):
        raise ConfigError(f"map.cg_rule must be 'ew', 'exact' or a number in (0, 1), got {rule!r}")
    lags = cfg["output"]["lags"]
    if not isinstance(lags, list) or not all(isinstance(k, int) and k >= 0 for k in lags):
        raise ConfigError(f"output.lags must be a list of nonnegative integers, got {lags!r}")
    return cfg


def load_config(path=None, overrides=None):
    """Defaults, updated by the YAML file at ``path``, then by ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        _check_keys(user, DEFAULTS)
        cfg = merge(cfg, user)
    if overrides:
        _check_keys(overrides, DEFAULTS)
        cfg = merge(cfg, overrides)
    return validate(cfg)


def parse_override(text):
    """``"svgd.m=30"`` -> ``{"svgd": {"m": 30}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return {parts[0]: {parts[1]: value}}
