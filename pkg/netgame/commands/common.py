"""Shared plumbing for the CLI commands: error mapping, settings overrides, output."""
from __future__ import annotations

import functools
import time
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, Optional

import orjson
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape

import netgame
from netgame.config import SolverSettings, get_settings
from netgame.errors import ConfigError, NetgameError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import RunConfig

logger = get_logger(__name__)

# stdout carries JSON / CSV; everything for humans goes to stderr
console = Console(stderr=True, soft_wrap=True)

JSON_OPTS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def handle_errors(fn: Callable) -> Callable:
    """Map NetgameError subclasses onto their exit codes with a short diagnostic."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NetgameError as e:
            log = bind_logger(logger, {"agent_name": "cli", "command": fn.__name__})
            log.error(e.message, extra={"exit_code": e.exit_code, "error": type(e).__name__})
            console.print(f"[bold red]error[/bold red] ({type(e).__name__}): {escape(e.message)}")
            for key, value in e.details.items():
                console.print(f"  {key}: {escape(str(value))}")
            raise typer.Exit(code=e.exit_code)

    return wrapper


def settings_with(**overrides: Any) -> SolverSettings:
    """Current settings with every non-None CLI flag applied on top."""
    update = {k: v for k, v in overrides.items() if v is not None}
    base = get_settings()
    try:
        return SolverSettings(**{**base.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"invalid option: {e.errors()[0]['loc'][0]}: {e.errors()[0]['msg']}") from e


def run_config(command: str, spec_path: Path, out_dir: Optional[Path] = None, seed: Optional[int] = None, **params: Any) -> RunConfig:
    try:
        return RunConfig(command=command, spec_path=spec_path, out_dir=out_dir, seed=seed, params=params)
    except ValidationError as e:
        raise ConfigError(e.errors()[0]["msg"]) from e


def dumps(obj: Any) -> bytes:
    return orjson.dumps(obj, option=JSON_OPTS)


def emit_json(obj: Any) -> None:
    typer.echo(dumps(obj).decode())


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(cfg: RunConfig, settings: SolverSettings, timings: Dict[str, float], outputs: Dict[str, str]) -> Optional[Path]:
    """manifest.json next to the outputs; timings live here and never in the CSVs."""
    if cfg.out_dir is None:
        return None
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "manifest.json"
    payload = {
        "config": cfg.model_dump(mode="json"),
        "settings": settings.model_dump(mode="json"),
        "versions": {"netgame": netgame.__version__, "numpy": _version("numpy"), "scipy": _version("scipy")},
        "timings_seconds": timings,
        "outputs": outputs,
    }
    path.write_bytes(dumps(payload))
    return path


class Stopwatch:
    """Named wall-clock laps for the run manifest."""

    def __init__(self) -> None:
        self.timings: Dict[str, float] = {}

    @contextmanager
    def lap(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)
