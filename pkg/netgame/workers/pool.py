import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from netgame.logging_config import bind_logger, get_logger
from netgame.utils.env import get_int_from_env

T = TypeVar("T")
R = TypeVar("R")

logger = get_logger(__name__)


def thread_count(override: Optional[int] = None) -> int:
    if override is not None and override >= 1:
        return override
    return get_int_from_env(["NETGAME_THREADS"], default=os.cpu_count() or 1, min_value=1, logger=logger)


def run_parallel(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None, label: str = "batch") -> List[R]:
    """Map fn over items on a bounded thread pool; results keep the input order.

    Each item must be an independent, pure computation. With one thread the
    map runs inline, which keeps tracebacks simple when debugging.
    """
    items = list(items)
    workers = min(thread_count(threads), max(1, len(items)))
    log = bind_logger(logger, {"agent_name": "pool", "label": label})
    log.debug("dispatching %d item(s) on %d thread(s)", len(items), workers)
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"netgame-{label}") as pool:
        return list(pool.map(fn, items))
