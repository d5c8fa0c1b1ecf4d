"""Monte-Carlo simulation of the closed-loop game.

Per tick: both schedulers draw, each estimate jumps to x on its own
communication, controls act on the estimates, then the state and the
estimates move one step h. Estimates between communications follow
exp(Atilde h). The state moves either by Euler-Maruyama or, with the
"exact" scheme, by the exact Gaussian transition of the stacked linear SDE.
"""
from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from netgame.config import SolverSettings, get_settings
from netgame.errors import DomainError, SteadyStateDivergenceError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import (
    DiscretizedModel,
    EmpiricalCosts,
    EnsembleStats,
    GameSpec,
    RiccatiSolution,
    SchedulingPolicy,
    TrajectoryLog,
)
from netgame.services.covariance_service import build_operators, spectral_radius
from netgame.services.model_service import matrix_exponential, noise_gramian
from netgame.utils.linalg import psd_sqrt
from netgame.utils.rng import Streams, make_streams
from netgame.workers.pool import run_parallel, thread_count

logger = get_logger(__name__)

CHUNK_TICKS = 2048


class _Stepper:
    """One-step maps for a batch of members; states are (members, n) arrays."""

    def __init__(self, spec: GameSpec, riccati: RiccatiSolution, scheme: str):
        if scheme not in ("euler", "exact"):
            raise DomainError(f"unknown SDE scheme {scheme!r}")
        n, h = spec.n, spec.h
        self.spec, self.scheme, self.h = spec, scheme, h
        self.K1 = np.linalg.solve(spec.R1, spec.B1.T @ riccati.P)
        self.K2 = np.linalg.solve(spec.R2, spec.B2.T @ riccati.P)
        self.Phi_t = matrix_exponential(riccati.Atilde, h)
        self.L0 = psd_sqrt(spec.Sigma0)

        if scheme == "euler":
            self.noise_dim = spec.G.shape[1]
            self.noise_map = math.sqrt(h) * spec.G
        else:
            Z = np.zeros((n, n))
            F = np.block([
                [spec.A, -spec.B1 @ self.K1, spec.B2 @ self.K2],
                [Z, riccati.Atilde, Z],
                [Z, Z, riccati.Atilde],
            ])
            self.Fx = matrix_exponential(F, h)[:n]
            W = noise_gramian(F, np.vstack([spec.G, np.zeros((2 * n, spec.G.shape[1]))]), h)
            self.noise_dim = n
            self.noise_map = psd_sqrt(W[:n, :n])

    def controls(self, xh1: np.ndarray, xh2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return -xh1 @ self.K1.T, xh2 @ self.K2.T

    def step(self, x, xh1, xh2, u1, u2, w):
        if self.scheme == "euler":
            s = self.spec
            drift = x @ s.A.T + u1 @ s.B1.T + u2 @ s.B2.T
            x_new = x + self.h * drift + w @ self.noise_map.T
        else:
            x_new = np.hstack([x, xh1, xh2]) @ self.Fx.T + w @ self.noise_map.T
        return x_new, xh1 @ self.Phi_t.T, xh2 @ self.Phi_t.T


def _run(
    stepper: _Stepper,
    policy: SchedulingPolicy,
    streams: Sequence[Streams],
    samples: int,
) -> Iterator[Tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (k, x, xhat1, xhat2, u1, u2, gamma1, gamma2) for k = 0 .. samples-1, post-reset."""
    n = stepper.spec.n
    x = np.stack([s.init.standard_normal(n) for s in streams]) @ stepper.L0.T
    xh1 = np.zeros_like(x)
    xh2 = np.zeros_like(x)

    for start in range(0, samples, CHUNK_TICKS):
        size = min(CHUNK_TICKS, samples - start)
        noise = np.stack([s.noise.standard_normal((size, stepper.noise_dim)) for s in streams], axis=1)
        gam1 = np.stack([s.sched1.random(size) < 1 - policy.p for s in streams], axis=1)
        gam2 = np.stack([s.sched2.random(size) < 1 - policy.q for s in streams], axis=1)
        for i in range(size):
            g1, g2 = gam1[i], gam2[i]
            xh1 = np.where(g1[:, None], x, xh1)
            xh2 = np.where(g2[:, None], x, xh2)
            u1, u2 = stepper.controls(xh1, xh2)
            yield start + i, x, xh1, xh2, u1, u2, g1, g2
            x, xh1, xh2 = stepper.step(x, xh1, xh2, u1, u2, noise[i])


def _tick_count(horizon: float, h: float) -> int:
    ticks = horizon / h
    if not horizon > 0 or abs(ticks - round(ticks)) > 1e-9 * max(1.0, ticks):
        raise DomainError(f"horizon {horizon} is not a positive multiple of h={h}")
    return int(round(ticks))


def simulate_trajectories(
    spec: GameSpec,
    riccati: RiccatiSolution,
    policy: SchedulingPolicy,
    horizon: float,
    seed: int,
    scheme: Optional[str] = None,
    settings: Optional[SolverSettings] = None,
) -> TrajectoryLog:
    """Single closed-loop run sampled at t = 0, h, ..., horizon."""
    settings = settings or get_settings()
    ticks = _tick_count(horizon, spec.h)
    stepper = _Stepper(spec, riccati, scheme or settings.sde_scheme)
    log = bind_logger(logger, {"agent_name": "simulation_service", "seed": seed, "ticks": ticks})

    rec = {name: [] for name in ("x", "xhat1", "xhat2", "u1", "u2", "gamma1", "gamma2")}
    for _, x, xh1, xh2, u1, u2, g1, g2 in _run(stepper, policy, [make_streams(seed)], ticks + 1):
        rec["x"].append(x[0])
        rec["xhat1"].append(xh1[0])
        rec["xhat2"].append(xh2[0])
        rec["u1"].append(u1[0])
        rec["u2"].append(u2[0])
        rec["gamma1"].append(g1[0])
        rec["gamma2"].append(g2[0])

    x = np.array(rec["x"])
    xh1, xh2 = np.array(rec["xhat1"]), np.array(rec["xhat2"])
    log.info("simulated trajectory", extra={"scheme": stepper.scheme})
    return TrajectoryLog(
        times=np.arange(ticks + 1) * spec.h,
        x=x,
        xhat1=xh1,
        xhat2=xh2,
        e1=x - xh1,
        e2=x - xh2,
        u1=np.array(rec["u1"]),
        u2=np.array(rec["u2"]),
        gamma1=np.array(rec["gamma1"], dtype=np.int8),
        gamma2=np.array(rec["gamma2"], dtype=np.int8),
        seed=seed,
    )


def _quadratic(spec: GameSpec, x: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Running cost x'Qx + u1'R1u1 - u2'R2u2 per row."""
    return (
        np.einsum("mi,ij,mj->m", x, spec.Q, x)
        + np.einsum("mi,ij,mj->m", u1, spec.R1, u1)
        - np.einsum("mi,ij,mj->m", u2, spec.R2, u2)
    )


def _member_block(
    stepper: _Stepper,
    policy: SchedulingPolicy,
    seed_base: int,
    members: Sequence[int],
    ticks: int,
    burn_in: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-member time averages of e e^T, the running cost and both communication indicators."""
    streams = [make_streams(seed_base, m) for m in members]
    d = 2 * stepper.spec.n
    outer = np.zeros((len(members), d, d))
    cost = np.zeros(len(members))
    comm = np.zeros((len(members), 2))
    for k, x, xh1, xh2, u1, u2, g1, g2 in _run(stepper, policy, streams, ticks):
        if k < burn_in:
            continue
        e = np.hstack([x - xh1, x - xh2])
        outer += e[:, :, None] * e[:, None, :]
        cost += _quadratic(stepper.spec, x, u1, u2)
        comm[:, 0] += g1
        comm[:, 1] += g2
    used = ticks - burn_in
    return outer / used, cost / used, comm[:, 0] / used, comm[:, 1] / used


def simulate_ensemble(
    spec: GameSpec,
    riccati: RiccatiSolution,
    disc: DiscretizedModel,
    policy: SchedulingPolicy,
    ticks: int,
    ensemble: int,
    seed_base: int,
    scheme: Optional[str] = None,
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> EnsembleStats:
    """Ensemble statistics of the stacked error and the running cost.

    Members are split into blocks that run on the worker pool; each member
    draws from its own (seed_base, member) streams so the split does not
    change any number.
    """
    settings = settings or get_settings()
    if ticks < 2 or ensemble < 2:
        raise DomainError("ensemble statistics need at least 2 ticks and 2 members")
    rho = spectral_radius(build_operators(disc, policy), settings)
    if rho >= 1.0:
        raise SteadyStateDivergenceError(rho)

    burn_in = int(ticks * settings.burn_in_fraction)
    stepper = _Stepper(spec, riccati, scheme or settings.sde_scheme)
    log = bind_logger(logger, {"agent_name": "simulation_service", "ensemble": ensemble, "ticks": ticks})

    blocks = [list(b) for b in np.array_split(np.arange(ensemble), min(ensemble, thread_count(threads)))]
    parts = run_parallel(
        lambda members: _member_block(stepper, policy, seed_base, members, ticks, burn_in),
        blocks,
        threads,
        label="ensemble",
    )
    outer = np.concatenate([p[0] for p in parts])
    cost = np.concatenate([p[1] for p in parts])
    rate1 = np.concatenate([p[2] for p in parts])
    rate2 = np.concatenate([p[3] for p in parts])

    root_m = math.sqrt(ensemble)
    stats = EnsembleStats(
        Sigma=outer.mean(axis=0),
        stderr=outer.std(axis=0, ddof=1) / root_m,
        quadratic=float(cost.mean()),
        quadratic_stderr=float(cost.std(ddof=1) / root_m),
        rate1=float(rate1.mean() / spec.h),
        rate2=float(rate2.mean() / spec.h),
        ensemble=ensemble,
        ticks=ticks,
        burn_in=burn_in,
        h=spec.h,
    )
    log.info("ensemble finished", extra={"quadratic": stats.quadratic, "scheme": stepper.scheme})
    return stats


def empirical_covariance(
    spec: GameSpec,
    riccati: RiccatiSolution,
    disc: DiscretizedModel,
    policy: SchedulingPolicy,
    ticks: int,
    ensemble: int,
    seed_base: int,
    scheme: Optional[str] = None,
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> EnsembleStats:
    """Empirical stacked-error covariance; read ``.Sigma`` and ``.stderr``."""
    return simulate_ensemble(spec, riccati, disc, policy, ticks, ensemble, seed_base, scheme, settings, threads)


def empirical_costs(source: Union[TrajectoryLog, EnsembleStats], spec: GameSpec) -> EmpiricalCosts:
    """Per-second empirical costs; the lambda terms weight communications per second."""
    lam, h = spec.lam, spec.h
    if isinstance(source, TrajectoryLog):
        # left Riemann sum over [0, T): the final sample closes the horizon
        n = len(source.times) - 1
        quadratic = float(_quadratic(spec, source.x[:n], source.u1[:n], source.u2[:n]).mean())
        rate1 = float(source.gamma1[:n].sum()) / (n * h)
        rate2 = float(source.gamma2[:n].sum()) / (n * h)
    else:
        quadratic, rate1, rate2 = source.quadratic, source.rate1, source.rate2
    return EmpiricalCosts(
        quadratic=quadratic,
        rate1=rate1,
        rate2=rate2,
        J1=quadratic + lam[0, 0] * rate1 + lam[0, 1] * rate2,
        J2=quadratic - lam[1, 0] * rate1 - lam[1, 1] * rate2,
        h=h,
    )
