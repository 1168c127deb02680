"""Random streams and the shared-memory task pool.

Every unit of work (a shell estimate, an iid draw) owns a generator derived
from the master seed and the unit's own index, never from the worker that
happens to run it. Results are therefore identical for any worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

# Domain tags keep streams of different task kinds disjoint.
TAG_ESTIMATE = 1
TAG_DRAW = 2
TAG_EVIDENCE = 3
TAG_PILOT = 4
TAG_PROBE = 5

WORKERS_ENV = "IIDSHELL_WORKERS"


def stream(seed, *key):
    """Generator for the task identified by ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def default_workers():
    value = os.environ.get(WORKERS_ENV)
    if value:
        return max(1, int(value))
    return 1


def run_tasks(fn, items, workers=None, backend="thread", chunksize=1):
    """Map ``fn`` over ``items`` preserving input order.

    Tasks are handed out ``chunksize`` at a time, so slow tasks do not hold
    up a statically assigned partition.
    """
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    if backend == "process":
        pool = ProcessPoolExecutor(max_workers=workers)
    elif backend == "thread":
        pool = ThreadPoolExecutor(max_workers=workers)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    with pool:
        return list(pool.map(fn, items, chunksize=chunksize))
