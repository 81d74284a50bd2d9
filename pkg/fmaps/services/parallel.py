import os
import logging
from collections import deque
from concurrent.futures import Executor, ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, Optional

from config import get_settings

settings = get_settings()
logger = logging.getLogger(__name__)


def resolve_threads(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


def block_slices(n: int, size: int) -> list[slice]:
    """Contiguous blocks covering range(n), in ascending order."""
    size = max(int(size), 1)
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


# Singleton pool. Tasks submitted here must not submit further tasks.
_executor: Optional[ThreadPoolExecutor] = None
_threads: int = settings.THREADS


def configure_threads(threads: int) -> None:
    """Resize the shared pool; takes effect on the next call to get_executor()."""
    global _executor, _threads
    if _executor is not None:
        _executor.shutdown(wait=True)
        _executor = None
    _threads = threads


def get_executor() -> ThreadPoolExecutor:
    global _executor
    if _executor is None:
        workers = resolve_threads(_threads)
        logger.debug("starting worker pool with %d threads", workers)
        _executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fmaps")
    return _executor


def _windowed(executor: Executor, fn: Callable, items: list, window: int) -> Iterator:
    pending = deque()
    for item in items:
        if len(pending) >= window:
            yield pending.popleft().result()
        pending.append(executor.submit(fn, item))
    while pending:
        yield pending.popleft().result()


def ordered_map(fn: Callable, items: Iterable, max_in_flight: Optional[int] = None) -> Iterator:
    """Map fn over items on the shared pool, yielding results in input order.

    At most max_in_flight calls are submitted and unconsumed at any time.
    """
    items = list(items)
    window = resolve_threads(_threads)
    if max_in_flight is not None:
        window = min(window, max(int(max_in_flight), 1))
    if len(items) <= 1 or window == 1:
        return map(fn, items)
    return _windowed(get_executor(), fn, items, window)
