import logging
import os
from typing import Iterable, Optional

from netgame.logging_config import bind_logger, get_logger


def get_int_from_env(
    keys: Iterable[str],
    default: int,
    min_value: Optional[int] = None,
    logger: Optional[logging.Logger] = None,
) -> int:
    """Integer from the first non-empty env var in ``keys``.

    Unparsable values and values below ``min_value`` log a warning and fall
    back to ``default``, e.g. ``get_int_from_env(["NETGAME_THREADS"], default=4, min_value=1)``.
    """
    keys = list(keys)
    log = bind_logger(logger or get_logger(__name__), {"function": "get_int_from_env", "keys": keys})

    found = next(((k, os.environ[k]) for k in keys if os.environ.get(k)), None)
    if found is None:
        log.debug("no env override; using %s", default)
        return default

    key, raw = found
    try:
        value = int(raw)
    except ValueError:
        log.warning("%s=%r is not an integer; using %s", key, raw, default)
        return default
    if min_value is not None and value < min_value:
        log.warning("%s=%s is below %s; using %s", key, value, min_value, default)
        return default

    log.debug("%s=%s", key, value)
    return value
