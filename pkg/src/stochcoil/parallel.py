"""Worker-pool helper with a determinism contract: outputs are returned in
input order, so results are identical for any worker count.

Threads rather than processes: the heavy kernels are numpy calls that release
the GIL, and thread workers avoid pickling the problem objects.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV_VAR = "STOCHCOIL_WORKERS"


def resolve_workers(requested=None) -> int:
    """Worker count: explicit argument, else the environment variable, else 1."""
    if requested is not None:
        return max(int(requested), 1)
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(int(env), 1)
    return 1


def parallel_map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
