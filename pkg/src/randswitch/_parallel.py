from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

# Work is always split into chunks of this size, whatever the worker count, so
# per-chunk arithmetic (and therefore every output) is independent of workers.
CHUNK_SIZE = 1024


def chunked(count: int, size: int = CHUNK_SIZE) -> list[range]:
    return [range(start, min(start + size, count)) for start in range(0, count, size)]


def parallel_map(func, jobs, workers: int = 1) -> list:
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))
