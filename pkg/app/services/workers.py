"""Thread-pool map for independent sweep points.

The dense eigensolves run inside LAPACK without the GIL. Results come back
in input order whatever order the workers finish in.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

from app.settings import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: Optional[int] = None) -> int:
    """Map the configured thread count (0 = auto) to a worker count."""
    requested = settings.THREADS if threads is None else threads
    if requested and requested > 0:
        return requested
    return min(32, os.cpu_count() or 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> list[R]:
    """
    Apply fn to every item, possibly in parallel.

    Args:
        fn: Pure function of one item
        items: Inputs, consumed eagerly
        threads: Worker count; None uses settings.THREADS

    Returns:
        Results in the order of items. The first exception raised by fn
        propagates.
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Mapping {len(items)} items over {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
