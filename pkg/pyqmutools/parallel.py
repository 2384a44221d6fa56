"""Ordered map over per-sample work items."""

from concurrent.futures import ThreadPoolExecutor


def ordered_map(function, items, workers=1):
    """Return ``[function(item) for item in items]``, optionally threaded.

    Results always come back in item order so that reductions over them
    are bit-identical for any worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [function(item) for item in items]
    workers = max(1, min(len(items), workers))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, items))
