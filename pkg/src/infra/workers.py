"""
Ordered thread-pool map for per-record work.

Results come back in input order whatever the thread count, so serial and
parallel runs produce identical output.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply fn to every item, optionally on a thread pool; the first failure is re-raised."""
    items = list(items)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]

    results: List[R] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(fn, item): index for index, item in enumerate(items)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception:
                logger.error(f"worker failed on item {index}")
                for pending in futures:
                    pending.cancel()
                raise
    return results
