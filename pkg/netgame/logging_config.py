import logging
import os
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from typing import Any, Dict

import orjson

# attributes every LogRecord carries; anything else arrived through ``extra``
_RECORD_ATTRS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime", "taskName"}
_COMPACT_ENVS = ("local", "development", "dev")
_ROTATE_BYTES = 10 * 1024 * 1024
_ROTATE_KEEP = 5


def _compact() -> bool:
    return os.environ.get("ENV", "production").lower() in _COMPACT_ENVS


class JsonFormatter(logging.Formatter):
    """One JSON object per record.

    Bound context (solver op, player, seed, grid sizes) is merged in from the
    record's extras. numpy scalars and arrays are serialised natively; anything
    else orjson cannot handle falls back to ``str``.
    """

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {"level": record.levelname, "message": record.getMessage()}
        if not _compact():
            payload["timestamp"] = datetime.fromtimestamp(record.created, timezone.utc).isoformat()
            payload["logger"] = record.name
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        payload.update((k, v) for k, v in vars(record).items() if k not in _RECORD_ATTRS)
        return orjson.dumps(payload, default=str, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS).decode()


class _StderrHandler(logging.StreamHandler):
    """Resolves sys.stderr at emit time so a swapped stderr (test runners, redirects) is followed."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _level_from_env(default: int) -> int:
    raw = os.environ.get("NETGAME_LOG_LEVEL")
    level = logging.getLevelName(raw.upper()) if raw else default
    return level if isinstance(level, int) else default


def _set_level(root: logging.Logger, level: int) -> None:
    root.setLevel(level)
    for handler in root.handlers:
        handler.setLevel(level)


def configure_logging(level: int | None = None, log_file: str | None = None) -> None:
    """Route the root logger through ``JsonFormatter`` on stderr.

    ``level`` defaults to ``NETGAME_LOG_LEVEL`` (else WARNING) and ``log_file``
    to ``NETGAME_LOG_FILE``. Calling it again only adjusts levels.
    """
    root = logging.getLogger()
    level = _level_from_env(logging.WARNING) if level is None else level

    if any(isinstance(h.formatter, JsonFormatter) for h in root.handlers):
        _set_level(root, level)
        return

    handlers: list[logging.Handler] = [_StderrHandler()]
    log_file = log_file or os.environ.get("NETGAME_LOG_FILE")
    if log_file:
        handlers.append(RotatingFileHandler(log_file, maxBytes=_ROTATE_BYTES, backupCount=_ROTATE_KEEP, encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(JsonFormatter())

    root.handlers = handlers
    _set_level(root, level)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def bind_logger(logger: logging.Logger, extra: Dict[str, Any] | None = None) -> logging.LoggerAdapter:
    """Attach a context dict to every record, e.g. ``{"agent_name": "scheduler_service", "player": "P1"}``."""
    return logging.LoggerAdapter(logger, extra or {})
