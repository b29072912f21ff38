"""Order-preserving process-pool map."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(func, items, workers: int = 1) -> list:
    """``[func(x) for x in items]``, optionally spread over worker processes.

    Results always come back in input order, so any reduction over them is
    independent of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(func, items))
