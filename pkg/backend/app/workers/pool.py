"""
Ordered fan-out of independent jobs.

Ladder levels, ensemble batches and profile times are independent computations.
They run inline when one worker is requested and on a concurrent.futures pool
otherwise; results always come back in submission order.
"""
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar
import logging

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def process_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """
    Apply a picklable callable to every item, in processes when workers > 1.

    Args:
        fn: Module-level function (or functools.partial of one)
        items: Job arguments
        workers: Process count; 1 runs inline

    Returns:
        Results in the order of `items`
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Dispatching {len(items)} jobs to {workers} processes")
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))


def thread_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Thread-pool variant for numpy-heavy work that releases the GIL."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))
