"""best-response | nash | sweep"""

from pathlib import Path
from typing import List, Optional

import numpy as np
import typer

from netgame.commands.common import (
    Stopwatch,
    console,
    dumps,
    emit_json,
    handle_errors,
    run_config,
    settings_with,
    write_manifest,
)
from netgame.errors import ConfigError, ConvergenceError
from netgame.models.schemas import NashMethod, Player
from netgame.services.model_service import build_model, load_spec
from netgame.services.scheduler_service import (
    best_response_curve,
    deviation_scan,
    nash_exhaustive,
    nash_multistart,
    sweep_lambda,
    trend_fraction,
    unit_grid,
)
from netgame.utils.csv_export import write_curve, write_sweep, write_trace

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Game spec JSON file.")
OUT_OPTION = typer.Option(None, "--out", help="Output directory for CSV files and manifest.json.")
ETA1_OPTION = typer.Option(None, "--eta1", help="P1 gradient step.")
ETA2_OPTION = typer.Option(None, "--eta2", help="P2 gradient step.")
KAPPA_OPTION = typer.Option(None, "--kappa", help="Best-response stopping tolerance.")
EPS_OPTION = typer.Option(None, "--eps", help="Outer stopping tolerance.")
TP_OPTION = typer.Option(None, "--tp", help="Neumann truncation parameter.")


def parse_grid(text: str, name: str) -> List[float]:
    """'start:stop:count' (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            return [float(v) for v in np.linspace(float(start), float(stop), int(count))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse {name} grid {text!r}: expected start:stop:count or a comma list") from e


@handle_errors
def best_response(
    config: Path = CONFIG_OPTION,
    player: Player = typer.Option(Player.P1, "--player", help="Responding player."),
    grid: float = typer.Option(0.01, "--grid", help="Opponent grid step on [0, 1]."),
    eta1: Optional[float] = ETA1_OPTION,
    eta2: Optional[float] = ETA2_OPTION,
    kappa: Optional[float] = KAPPA_OPTION,
    tp: Optional[int] = TP_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Best-response curve of one player over a uniform opponent grid."""
    cfg = run_config("best-response", config, out, player=player.value, grid=grid)
    settings = settings_with(eta1=eta1, eta2=eta2, kappa=kappa, tp=tp)
    watch = Stopwatch()
    model = build_model(load_spec(config), settings)
    with watch.lap("curve"):
        curve = best_response_curve(model, player, unit_grid(grid), settings=settings)

    outputs = {}
    if out is not None:
        outputs["curve"] = str(write_curve(out / f"best_response_{player.value}.csv", curve))
    emit_json(curve.model_dump(mode="json"))
    write_manifest(cfg, settings, watch.timings, outputs)


@handle_errors
def nash(
    config: Path = CONFIG_OPTION,
    method: NashMethod = typer.Option(NashMethod.iterative, "--method"),
    seed: int = typer.Option(0, "--seed", help="Seed for the random initial points."),
    starts: int = typer.Option(10, "--starts", min=1, help="Random initial points (iterative)."),
    grid: float = typer.Option(0.01, "--grid", help="Grid step (exhaustive)."),
    sigma: Optional[float] = typer.Option(None, "--sigma", help="Curve intersection tolerance (exhaustive)."),
    eta1: Optional[float] = ETA1_OPTION,
    eta2: Optional[float] = ETA2_OPTION,
    eps: Optional[float] = EPS_OPTION,
    kappa: Optional[float] = KAPPA_OPTION,
    tp: Optional[int] = TP_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Nash scheduling policies by alternating best responses or by curve intersection."""
    cfg = run_config("nash", config, out, seed, method=method.value, starts=starts, grid=grid, sigma=sigma)
    settings = settings_with(eta1=eta1, eta2=eta2, eps=eps, kappa=kappa, tp=tp)
    watch = Stopwatch()
    with watch.lap("build_model"):
        model = build_model(load_spec(config), settings)

    outputs = {}
    if method is NashMethod.iterative:
        with watch.lap("multistart"):
            result = nash_multistart(model, n_starts=starts, seed=seed, settings=settings)
        if out is not None:
            for k, run in enumerate(result.runs):
                outputs[f"trace_{k}"] = str(write_trace(out / f"trace_{k}.csv", run))
        payload = {
            "method": method.value,
            "equilibria": [
                {"p_star": e.p_star, "q_star": e.q_star, "iterations": e.iterations, "costs": e.costs.model_dump(mode="json")}
                for e in result.equilibria
            ],
            "dominance": result.dominance,
            "starts": [{"init": r.init, "p_star": r.p_star, "q_star": r.q_star, "converged": r.converged} for r in result.runs],
        }
        if result.equilibria:
            best = result.equilibria[0]
            report = deviation_scan(model, best.p_star, best.q_star, settings=settings)
            payload["deviation_check"] = report.model_dump(mode="json")
        found = bool(result.equilibria)
        advisory = "no start converged within the iteration caps"
    else:
        with watch.lap("exhaustive"):
            result = nash_exhaustive(model, eps_grid=grid, sigma_tol=sigma, settings=settings)
        if out is not None:
            outputs["curve_p"] = str(write_curve(out / "best_response_P1.csv", result.p_curve))
            outputs["curve_q"] = str(write_curve(out / "best_response_P2.csv", result.q_curve))
        payload = {"method": method.value, "ne_pairs": result.ne_pairs, "advisory": result.advisory}
        found = bool(result.ne_pairs)
        advisory = result.advisory

    emit_json(payload)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "nash.json").write_bytes(dumps(payload))
        outputs["nash"] = str(out / "nash.json")
    write_manifest(cfg, settings, watch.timings, outputs)
    if not found:
        raise ConvergenceError(advisory)


@handle_errors
def sweep(
    config: Path = CONFIG_OPTION,
    l11: str = typer.Option(..., "--l11", help="lambda11 grid: start:stop:count or a comma list."),
    l22: str = typer.Option(..., "--l22", help="lambda22 grid: start:stop:count or a comma list."),
    eta1: Optional[float] = ETA1_OPTION,
    eta2: Optional[float] = ETA2_OPTION,
    eps: Optional[float] = EPS_OPTION,
    kappa: Optional[float] = KAPPA_OPTION,
    tp: Optional[int] = TP_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Nash equilibrium over a grid of own-communication costs."""
    cfg = run_config("sweep", config, out, l11=l11, l22=l22)
    settings = settings_with(eta1=eta1, eta2=eta2, eps=eps, kappa=kappa, tp=tp)
    l11s, l22s = parse_grid(l11, "lambda11"), parse_grid(l22, "lambda22")
    watch = Stopwatch()
    model = build_model(load_spec(config), settings)
    with watch.lap("sweep"):
        rows = sweep_lambda(model, l11s, l22s, settings=settings)
    frac_p, frac_q = trend_fraction(rows)

    outputs = {}
    if out is not None:
        outputs["sweep"] = str(write_sweep(out / "sweep.csv", rows))
    emit_json({"rows": [r.model_dump(mode="json") for r in rows], "trend_p": frac_p, "trend_q": frac_q})
    console.print(f"nondecreasing steps: p* along lambda11 {frac_p:.0%}, q* along lambda22 {frac_q:.0%}")
    write_manifest(cfg, settings, watch.timings, outputs)
    if not all(r.converged for r in rows):
        raise ConvergenceError("some sweep cells did not converge", {"cells": sum(not r.converged for r in rows)})


def register(app: typer.Typer) -> None:
    app.command("best-response")(best_response)
    app.command("nash")(nash)
    app.command("sweep")(sweep)
