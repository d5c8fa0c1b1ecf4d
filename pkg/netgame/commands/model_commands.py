"""validate | solve | steady-state"""

from pathlib import Path
from typing import Optional

import numpy as np
import typer
from rich.markup import escape
from rich.table import Table

from netgame.commands.common import (
    Stopwatch,
    console,
    emit_json,
    handle_errors,
    run_config,
    settings_with,
    write_manifest,
)
from netgame.errors import SpecValidationError, WellPosednessError
from netgame.models.schemas import SchedulingPolicy
from netgame.services.covariance_service import build_operators, steady_state_direct, steady_state_neumann
from netgame.services.model_service import build_model, load_spec, validate_spec
from netgame.services.riccati_service import solve_game_riccati, solve_wellposedness_are

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Game spec JSON file.")


def _matrix_table(title: str, M: np.ndarray) -> Table:
    table = Table(title=title, show_header=False)
    for _ in range(M.shape[1]):
        table.add_column(justify="right")
    for row in M:
        table.add_row(*(f"{v:.4f}" for v in row))
    return table


@handle_errors
def validate(config: Path = CONFIG_OPTION) -> None:
    """Check dimensions, weights, stabilizability and observability."""
    run_config("validate", config)
    spec = load_spec(config)
    report = validate_spec(spec, settings_with())
    emit_json({"passed": report.passed, **report.model_dump(mode="json")})
    if not report.passed:
        raise SpecValidationError("; ".join(report.messages), report=report)
    console.print("[green]spec is valid[/green]")


@handle_errors
def solve(config: Path = CONFIG_OPTION) -> None:
    """Game Riccati solution, error weights, J* and the well-posedness certificate."""
    run_config("solve", config)
    settings = settings_with()
    spec = load_spec(config)
    report = validate_spec(spec, settings)
    if not report.passed:
        raise SpecValidationError("; ".join(report.messages), report=report)
    riccati = solve_game_riccati(spec, settings)

    try:
        cert = solve_wellposedness_are(spec, riccati, settings)
        wellposed = {"passed": True, **cert.model_dump(mode="json")}
    except WellPosednessError as e:
        # the game solution exists; a failed certificate is a diagnostic only
        wellposed = {"passed": False, "message": e.message, **e.details}

    eig = np.linalg.eigvals(riccati.Atilde)
    emit_json({
        **riccati.model_dump(mode="json"),
        "Atilde_eigenvalues": {"real": eig.real.tolist(), "imag": eig.imag.tolist()},
        "wellposedness": wellposed,
    })
    console.print(_matrix_table("P", riccati.P))
    console.print(f"J* = {riccati.Jstar:.4f}   residual = {riccati.residual:.2e}")
    if not wellposed["passed"]:
        console.print(f"[yellow]{escape(wellposed['message'])}[/yellow]")


@handle_errors
def steady_state(
    config: Path = CONFIG_OPTION,
    p: float = typer.Option(..., min=0.0, max=1.0, help="P1 no-communication probability."),
    q: float = typer.Option(..., min=0.0, max=1.0, help="P2 no-communication probability."),
    tp: Optional[int] = typer.Option(None, help="Neumann truncation parameter."),
    out: Optional[Path] = typer.Option(None, "--out", help="Directory for manifest.json."),
) -> None:
    """Steady-state error covariance by truncated Neumann series and by direct solve."""
    cfg = run_config("steady-state", config, out, p=p, q=q, tp=tp)
    settings = settings_with(tp=tp)
    watch = Stopwatch()
    with watch.lap("build_model"):
        model = build_model(load_spec(config), settings)
    ops = build_operators(model.disc, SchedulingPolicy(p=p, q=q))
    with watch.lap("neumann"):
        ss = steady_state_neumann(ops, settings.tp, settings, certify=True)
    with watch.lap("direct"):
        direct = steady_state_direct(ops, settings)

    L = model.disc.Lambda_tilde
    emit_json({
        "p": p,
        "q": q,
        "tp": ss.tp,
        "rho": ss.rho,
        "bound": ss.bound,
        "certified_bound": ss.certified_bound,
        "residual": ss.residual,
        "Sigma_neumann": ss.Sigma.tolist(),
        "Sigma_direct": direct.tolist(),
        "discrepancy": float(np.linalg.norm(ss.Sigma - direct, 2)),
        "trace_neumann": float(np.trace(L @ ss.Sigma)),
        "trace_direct": float(np.trace(L @ direct)),
    })
    write_manifest(cfg, settings, watch.timings, {})


def register(app: typer.Typer) -> None:
    app.command("validate")(validate)
    app.command("solve")(solve)
    app.command("steady-state")(steady_state)
