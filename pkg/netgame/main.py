"""Command-line entry point: ``python -m netgame <command>``."""
import logging
from typing import Optional

import typer

from netgame.commands import model_commands, nash_commands, simulation_commands
from netgame.logging_config import configure_logging

app = typer.Typer(
    name="netgame",
    help="Nash control and communication scheduling for two-player LQ stochastic games.",
    no_args_is_help=True,
    add_completion=False,
)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug-level JSON logs on stderr."),
    log_file: Optional[str] = typer.Option(None, "--log-file", help="Also write logs to a rotating file."),
) -> None:
    configure_logging(logging.DEBUG if verbose else None, log_file)


model_commands.register(app)
nash_commands.register(app)
simulation_commands.register(app)


if __name__ == "__main__":
    app()
