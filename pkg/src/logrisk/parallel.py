"""Ordered map over a process pool.

Results come back in input order whatever the pool size, and every task
carries its own seed, so outputs do not depend on ``jobs``.
"""

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs():
    return os.cpu_count() or 1


def ordered_map(fn, items, jobs=1):
    items = list(items)
    if jobs is None:
        jobs = default_jobs()
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
