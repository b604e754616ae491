"""Process-pool map used by the simulation engines."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_threads():
    return os.cpu_count() or 1


def pmap(fn, items, threads=None, chunksize=1):
    """``map`` over ``items``, in worker processes when ``threads > 1``.

    Results keep the input order, so seeded work is independent of scheduling.
    """
    items = list(items)
    threads = default_threads() if threads is None else int(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
