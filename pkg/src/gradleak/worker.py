from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from .diagnostics import log_info

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    *,
    max_workers: int = 1,
    label: str = "tasks",
) -> List[R]:
    """Apply ``fn`` to every item, possibly on a thread pool; results keep input order."""
    work = list(items)
    total = len(work)
    if max_workers <= 1 or total <= 1:
        return [fn(item) for item in work]

    log_info("ordered_map start label=%s items=%s workers=%s", label, total, max_workers)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(fn, item) for item in work]
        results = [fut.result() for fut in futures]
    log_info("ordered_map finished label=%s items=%s", label, total)
    return results
