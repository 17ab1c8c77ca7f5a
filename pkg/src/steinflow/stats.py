"""Statistics of functional samples on mesh nodes.

The variance uses 1/m and the lagged covariance uses 1/(m - 1), exactly
as the two formulas are usually printed; at lag 0 they therefore differ
by the factor m / (m - 1).
"""
from dataclasses import dataclass, field

import numpy as np


def _samples(samples):
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {x.shape[0]}")
    return x


def mean_function(samples):
    return np.mean(np.atleast_2d(np.asarray(samples, dtype=float)), axis=0)


def variance_function(samples):
    """Per-node ``(1/m) sum_i (u_i(x) - mean(x))^2``."""
    x = _samples(samples)
    return np.mean((x - x.mean(axis=0)) ** 2, axis=0)


def covariance_function(samples, lag):
    """``cov(x_i, x_{i+lag})`` with 1/(m - 1) for every node i with ``i + lag < n``."""
    x = _samples(samples)
    n = x.shape[1]
    if int(lag) != lag or not 0 <= lag < n:
        raise ValueError(f"lag must be an integer in [0, {n}), got {lag!r}")
    lag = int(lag)
    d = x - x.mean(axis=0)
    return np.sum(d[:, : n - lag] * d[:, lag:], axis=0) / (x.shape[0] - 1)


def l2_discrepancy(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass
class StreamingMoments:
    """Welford one-pass mean and (1/N) variance of a stream of fields."""

    n: int
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.n)
            self.m2 = np.zeros(self.n)

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self):
        if self.count == 0:
            return np.full(self.n, np.nan)
        return self.m2 / self.count


@dataclass
class StatsSummary:
    mean: np.ndarray
    variance: np.ndarray
    covariance: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, lags=()):
        return cls(mean_function(samples), variance_function(samples),
                   {int(k): covariance_function(samples, k) for k in lags})


def discrepancy_table(summary, reference):
    """Rows ``(statistic, lag, value)`` comparing two summaries in l2."""
    rows = [("variance", "", l2_discrepancy(summary.variance, reference.variance))]
    for k in sorted(set(summary.covariance) & set(reference.covariance)):
        rows.append(("covariance", k, l2_discrepancy(summary.covariance[k],
                                                     reference.covariance[k])))
    return rows
