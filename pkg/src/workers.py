import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from src.config import THREADS_ENV
from src.errors import PreconditionError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(value: str | None = None) -> int:
    """
    Number of worker threads for frame-level work.

    Reads ``POLYREP_THREADS`` when ``value`` is None. Unset or ``0`` means one
    worker per CPU; ``1`` runs serially.
    """
    raw = os.environ.get(THREADS_ENV, "") if value is None else value
    if raw.strip() == "":
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError as exc:
        raise PreconditionError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if count < 0:
        raise PreconditionError(f"{THREADS_ENV} must be >= 0, got {count}")
    return count or (os.cpu_count() or 1)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``map`` over a thread pool; results keep the input order."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug("Mapping %d items over %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
