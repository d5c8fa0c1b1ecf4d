"""simulate"""

from pathlib import Path
from typing import Optional

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
from netgame.commands.nash_commands import EPS_OPTION, ETA1_OPTION, ETA2_OPTION, KAPPA_OPTION
from netgame.errors import ConvergenceError
from netgame.models.schemas import SchedulingPolicy
from netgame.services.covariance_service import build_operators, steady_state
from netgame.services.model_service import build_model, load_spec
from netgame.services.scheduler_service import costs_at, nash_iterative
from netgame.services.simulation_service import empirical_costs, simulate_ensemble, simulate_trajectories
from netgame.utils.csv_export import write_trajectory

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Game spec JSON file.")

# entrywise acceptance for the ensemble covariance
REL_TOL = 0.05
SE_MULT = 3.0


def covariance_check(Sigma_hat: np.ndarray, stderr: np.ndarray, Sigma: np.ndarray) -> dict:
    """Entrywise |Sigma_hat - Sigma| <= max(5% of |Sigma|, 3 standard errors)."""
    allowed = np.maximum(REL_TOL * np.abs(Sigma), SE_MULT * stderr)
    gap = np.abs(Sigma_hat - Sigma)
    return {
        "passed": bool(np.all(gap <= allowed)),
        "max_gap": float(gap.max()),
        "worst_ratio": float((gap / np.where(allowed > 0, allowed, np.inf)).max()),
    }


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-12)


@handle_errors
def simulate(
    config: Path = CONFIG_OPTION,
    p: Optional[float] = typer.Option(None, min=0.0, max=1.0, help="P1 no-communication probability; default: Nash."),
    q: Optional[float] = typer.Option(None, min=0.0, max=1.0, help="P2 no-communication probability; default: Nash."),
    horizon: float = typer.Option(500.0, "--horizon", help="Trajectory length in seconds."),
    seed: int = typer.Option(0, "--seed"),
    scheme: Optional[str] = typer.Option(None, "--scheme", help="euler or exact."),
    ensemble: int = typer.Option(0, "--ensemble", min=0, help="Members for the ensemble statistics; 0 skips them."),
    ticks: int = typer.Option(50_000, "--ticks", min=2, help="Ticks per ensemble member."),
    tp: Optional[int] = typer.Option(None, "--tp"),
    eta1: Optional[float] = ETA1_OPTION,
    eta2: Optional[float] = ETA2_OPTION,
    eps: Optional[float] = EPS_OPTION,
    kappa: Optional[float] = KAPPA_OPTION,
    threads: Optional[int] = typer.Option(None, "--threads", help="Overrides NETGAME_THREADS."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory for trajectory.csv and summaries."),
) -> None:
    """Closed-loop Monte-Carlo run at a scheduling policy, compared with the analytic costs.

    Without --p or --q the policy is the iterative Nash equilibrium, tuned by
    the same step and tolerance flags as ``nash``.
    """
    cfg = run_config("simulate", config, out, seed, p=p, q=q, horizon=horizon, scheme=scheme, ensemble=ensemble, ticks=ticks)
    settings = settings_with(sde_scheme=scheme, tp=tp, eta1=eta1, eta2=eta2, eps=eps, kappa=kappa)
    watch = Stopwatch()
    with watch.lap("build_model"):
        model = build_model(load_spec(config), settings)

    if p is None or q is None:
        with watch.lap("nash"):
            ne = nash_iterative(model, settings=settings)
        if not ne.converged:
            raise ConvergenceError("Nash search did not converge; pass --p and --q explicitly")
        p = ne.p_star if p is None else p
        q = ne.q_star if q is None else q
    policy = SchedulingPolicy(p=p, q=q)
    analytic = costs_at(model, p, q, settings)
    spec = model.spec

    with watch.lap("trajectory"):
        log = simulate_trajectories(spec, model.riccati, policy, horizon, seed, settings=settings)
    traj_costs = empirical_costs(log, spec)
    summary = {
        "p": p,
        "q": q,
        "seed": seed,
        "scheme": settings.sde_scheme,
        "analytic": analytic.model_dump(mode="json"),
        "trajectory": traj_costs.model_dump(mode="json"),
    }

    outputs = {}
    if out is not None:
        outputs["trajectory"] = str(write_trajectory(out / "trajectory.csv", log))

    if ensemble > 0:
        with watch.lap("ensemble"):
            stats = simulate_ensemble(
                spec, model.riccati, model.disc, policy, ticks, ensemble, seed, settings=settings, threads=threads
            )
        Sigma = steady_state(build_operators(model.disc, policy), settings=settings).Sigma
        cov = covariance_check(stats.Sigma, stats.stderr, Sigma)
        per_tick = empirical_costs(stats, spec).per_tick(spec.lam)
        cost_gap = max(_relative(per_tick.J1, analytic.J1), _relative(per_tick.J2, analytic.J2))
        summary["ensemble"] = {
            "stats": stats.model_dump(mode="json"),
            "Sigma_analytic": Sigma.tolist(),
            "covariance_check": cov,
            "costs_per_tick": per_tick.model_dump(mode="json"),
            "cost_relative_gap": cost_gap,
            "costs_passed": cost_gap <= REL_TOL,
        }
        verdict = "PASS" if cov["passed"] and cost_gap <= REL_TOL else "FAIL"
        console.print(
            f"{verdict}: covariance within max({REL_TOL:.0%}, {SE_MULT:g} SE) = {cov['passed']}, "
            f"cost gap {cost_gap:.2%}"
        )

    emit_json(summary)
    if out is not None:
        (out / "summary.json").write_bytes(dumps(summary))
        outputs["summary"] = str(out / "summary.json")
    write_manifest(cfg, settings, watch.timings, outputs)


def register(app: typer.Typer) -> None:
    app.command("simulate")(simulate)
