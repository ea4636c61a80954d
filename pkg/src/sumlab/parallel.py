"""Replica fan-out honouring ``SUMLAB_THREADS``."""

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count(requested=None) -> int:
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("SUMLAB_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"SUMLAB_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def map_ordered(fn, jobs, workers=None) -> list:
    """``[fn(j) for j in jobs]``, possibly across processes; order is preserved."""
    jobs = list(jobs)
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))
