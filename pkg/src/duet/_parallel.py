import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("DUET_THREADS", "1") or 1)
    return max(1, int(threads))


def map_rows(func, n, threads=1):
    """Apply ``func(idx)`` to contiguous chunks of ``range(n)``.

    ``func`` must treat rows independently; outputs (tuples of arrays whose
    first axis is the row) are concatenated back in row order, so results do
    not depend on the thread count.
    """
    threads = resolve_threads(threads)
    if threads == 1 or n < 2 * threads:
        return func(np.arange(n))
    chunks = [c for c in np.array_split(np.arange(n), threads) if c.size]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(func, chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)
