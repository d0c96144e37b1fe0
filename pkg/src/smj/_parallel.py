"""Thread pool helper; worker count from ``SMJ_THREADS`` (default 1)."""
import os
from concurrent.futures import ThreadPoolExecutor


def n_workers() -> int:
    raw = os.environ.get("SMJ_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SMJ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"SMJ_THREADS must be a positive integer, got {raw!r}")
    return min(n, os.cpu_count() or 1)


def pmap(fn, items, workers=None):
    """``[fn(x) for x in items]``, in order, over a thread pool when ``workers > 1``."""
    workers = n_workers() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
