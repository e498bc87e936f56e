import logging
import multiprocessing as mp
from collections.abc import Callable, Iterable, Iterator
from typing import TypeVar

from convflat.core.config import settings
from convflat.logging_config import setup_logging

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def _init_worker(log_level: str, log_format: str | None) -> None:
    setup_logging(log_level, log_format)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], jobs: int | None = None) -> Iterator[R]:
    """Map ``fn`` over independent tasks, yielding results in submission order.

    ``fn`` and the items must be picklable (module-level function, pydantic
    configs). Results do not depend on ``jobs``: every task carries its own seed.
    """
    tasks = list(items)
    workers = min(jobs or settings.resolved_jobs(), len(tasks))
    if workers <= 1:
        yield from map(fn, tasks)
        return

    root = logging.getLogger()
    level = logging.getLevelName(root.getEffectiveLevel())
    fmt = settings.LOG_FORMAT
    logger.info(f"Running {len(tasks)} tasks on {workers} processes")
    ctx = mp.get_context("spawn")
    with ctx.Pool(workers, initializer=_init_worker, initargs=(level, fmt)) as pool:
        yield from pool.imap(fn, tasks)
