"""Ordered parallel map for per-particle and per-chain work."""
import os
from concurrent.futures import ThreadPoolExecutor

import psutil

WORKERS_ENV = "STEINFLOW_WORKERS"


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    # physical cores; hyperthreads add little to BLAS-bound work
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


class Mapper:
    """``mapper(f, items)`` returns ``[f(x) for x in items]`` in input order.

    With one worker everything runs inline, so results are bitwise
    reproducible.  numpy/scipy release the GIL in the heavy kernels, so
    threads give real speedups for the PDE solves and dense algebra.
    """

    def __init__(self, workers=1):
        self.workers = max(1, int(workers))

    def __call__(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as pool:
            return list(pool.map(fn, items))


SERIAL = Mapper(1)
