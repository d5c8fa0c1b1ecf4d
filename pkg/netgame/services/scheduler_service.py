"""Discrete-time costs, their gradients, best responses and Nash search.

P1 minimises J1 over its no-communication probability p, P2 maximises J2
over q:

    J1 = J~* + tr(Lambda~ Sigma) + l11 (1 - p) + l12 (1 - q)
    J2 = J~* + tr(Lambda~ Sigma) - l21 (1 - p) - l22 (1 - q)

with J~* = J* + phi(h)/h. Gradients follow from differentiating these
expressions, so dJ1/dp = tr(Lambda~ dSigma/dp) - l11 and
dJ2/dq = tr(Lambda~ dSigma/dq) + l22.
"""
from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from netgame.config import SolverSettings, get_settings
from netgame.errors import DomainError, SteadyStateDivergenceError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import (
    BestResponseCurve,
    BestResponseResult,
    CommunicationRates,
    CostPair,
    DeviationReport,
    DiscretizedModel,
    ExhaustiveResult,
    MultiStartResult,
    NashMethod,
    NashResult,
    Player,
    RiccatiSolution,
    SchedulingPolicy,
    SolverModel,
    SweepRow,
)
from netgame.services.covariance_service import build_operators, grad_sigma, steady_state
from netgame.workers.pool import run_parallel

logger = get_logger(__name__)


def _clip(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


# --- Costs and gradients ---

def evaluate_costs(
    riccati: RiccatiSolution,
    disc: DiscretizedModel,
    lam: np.ndarray,
    policy: SchedulingPolicy,
    tp: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
) -> CostPair:
    """Steady-state costs of a scheduling policy.

    A divergent policy gets J1 = +inf and J2 = -inf, so it is never an
    improvement for either player.
    """
    settings = settings or get_settings()
    p, q = policy.p, policy.q
    J_tilde = riccati.Jstar + disc.phi_over_h
    try:
        ss = steady_state(build_operators(disc, policy), tp, settings)
    except SteadyStateDivergenceError as e:
        return CostPair(J1=math.inf, J2=-math.inf, J_tilde_star=J_tilde, trace_term=math.inf, converged=False, message=e.message)

    trace_term = float(np.trace(disc.Lambda_tilde @ ss.Sigma))
    return CostPair(
        J1=J_tilde + trace_term + lam[0, 0] * (1 - p) + lam[0, 1] * (1 - q),
        J2=J_tilde + trace_term - lam[1, 0] * (1 - p) - lam[1, 1] * (1 - q),
        J_tilde_star=J_tilde,
        trace_term=trace_term,
    )


def grad_cost(
    riccati: RiccatiSolution,
    disc: DiscretizedModel,
    lam: np.ndarray,
    policy: SchedulingPolicy,
    tp: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
) -> Tuple[float, float]:
    """(dJ1/dp, dJ2/dq). Raises SteadyStateDivergenceError for divergent policies."""
    settings = settings or get_settings()
    ops = build_operators(disc, policy)
    ss = steady_state(ops, tp, settings)
    Sp = grad_sigma(ops, ss.Sigma, "p", tp, settings, rho=ss.rho)
    Sq = grad_sigma(ops, ss.Sigma, "q", tp, settings, rho=ss.rho)
    L = disc.Lambda_tilde
    return float(np.trace(L @ Sp)) - lam[0, 0], float(np.trace(L @ Sq)) + lam[1, 1]


def costs_at(model: SolverModel, p: float, q: float, settings: Optional[SolverSettings] = None) -> CostPair:
    return evaluate_costs(model.riccati, model.disc, model.spec.lam, SchedulingPolicy(p=p, q=q), settings=settings)


def _own_gradient(model: SolverModel, player: Player, own: float, opponent: float, settings: SolverSettings) -> Optional[float]:
    """The moving player's gradient only, or None if the policy diverges."""
    p, q = (own, opponent) if player is Player.P1 else (opponent, own)
    ops = build_operators(model.disc, SchedulingPolicy(p=p, q=q))
    try:
        ss = steady_state(ops, None, settings)
        which = "p" if player is Player.P1 else "q"
        dS = grad_sigma(ops, ss.Sigma, which, None, settings, rho=ss.rho)
    except SteadyStateDivergenceError:
        return None
    trace = float(np.trace(model.disc.Lambda_tilde @ dS))
    lam = model.spec.lam
    return trace - lam[0, 0] if player is Player.P1 else trace + lam[1, 1]


def communication_rates(policy: SchedulingPolicy, h: float) -> CommunicationRates:
    if not h > 0:
        raise DomainError(f"step h must be positive, got {h}")
    return CommunicationRates(
        per_tick1=1 - policy.p,
        per_tick2=1 - policy.q,
        per_second1=(1 - policy.p) / h,
        per_second2=(1 - policy.q) / h,
    )


# --- Best response ---

def best_response(
    model: SolverModel,
    player: Player,
    opponent: float,
    eta: Optional[float] = None,
    kappa: Optional[float] = None,
    init: float = 0.5,
    max_iters: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
) -> BestResponseResult:
    """Projected gradient descent on J1 (P1) or ascent on J2 (P2) over [0, 1].

    Stops once a projected step moves less than kappa and returns the iterate
    that step started from. Steps into a divergent policy are halved back
    toward the last stable iterate; a divergent start is halved toward 0.
    """
    settings = settings or get_settings()
    player = Player(player)
    eta = eta if eta is not None else (settings.eta1 if player is Player.P1 else settings.eta2)
    kappa = kappa if kappa is not None else settings.kappa
    max_iters = max_iters if max_iters is not None else settings.max_inner_iters
    sign = -1.0 if player is Player.P1 else 1.0
    log = bind_logger(logger, {"agent_name": "scheduler_service", "player": player.value, "opponent": opponent})

    x = _clip(init)
    g = _own_gradient(model, player, x, opponent, settings)
    backtracks = 0
    while g is None:
        if x == 0.0:
            raise SteadyStateDivergenceError(
                math.inf, f"{player.value} cannot stabilise the error covariance against opponent={opponent:.6g}"
            )
        backtracks += 1
        x = 0.0 if backtracks >= settings.backtrack_max else 0.5 * x
        g = _own_gradient(model, player, x, opponent, settings)

    for it in range(1, max_iters + 1):
        x_new = _clip(x + sign * eta * g)
        if abs(x_new - x) <= kappa:
            log.debug("best response converged", extra={"value": x, "iterations": it})
            return BestResponseResult(player=player, opponent=opponent, value=x, iterations=it, converged=True, backtracks=backtracks)

        g_new = _own_gradient(model, player, x_new, opponent, settings)
        halvings = 0
        while g_new is None:
            halvings += 1
            if halvings > settings.backtrack_max:
                raise SteadyStateDivergenceError(math.inf, f"{player.value} step backtracking failed at {x:.6g}")
            x_new = 0.5 * (x + x_new)
            g_new = _own_gradient(model, player, x_new, opponent, settings)
        backtracks += halvings
        x, g = x_new, g_new

    log.warning("best response hit the iteration cap", extra={"value": x, "max_iters": max_iters})
    return BestResponseResult(player=player, opponent=opponent, value=x, iterations=max_iters, converged=False, backtracks=backtracks)


def best_response_curve(
    model: SolverModel,
    player: Player,
    grid: Sequence[float],
    eta: Optional[float] = None,
    kappa: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> BestResponseCurve:
    """Best response at every opponent value of the grid; NaN where it diverges."""
    settings = settings or get_settings()
    player = Player(player)

    def respond(opponent: float) -> float:
        try:
            return best_response(model, player, opponent, eta, kappa, settings=settings).value
        except SteadyStateDivergenceError:
            return math.nan

    grid = [float(v) for v in grid]
    return BestResponseCurve(player=player, grid=grid, responses=run_parallel(respond, grid, threads, label=f"br-{player.value}"))


def unit_grid(step: float) -> List[float]:
    if not 0 < step < 1:
        raise DomainError(f"grid step must lie in (0, 1), got {step}")
    count = int(round(1.0 / step))
    return [round(k / count, 12) for k in range(count + 1)]


# --- Nash search ---

def _cluster(points: List[Tuple[float, float, float]], radius: float) -> List[Tuple[float, float]]:
    """Group (p, q, mismatch) candidates by single linkage in L1; keep the best-matched point per group."""
    parent = list(range(len(points)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if abs(points[i][0] - points[j][0]) + abs(points[i][1] - points[j][1]) <= radius:
                parent[find(i)] = find(j)

    best = {}
    for i, pt in enumerate(points):
        root = find(i)
        if root not in best or pt[2] < best[root][2]:
            best[root] = pt
    return sorted((p, q) for p, q, _ in best.values())


def nash_exhaustive(
    model: SolverModel,
    eps_grid: float = 0.01,
    eta1: Optional[float] = None,
    eta2: Optional[float] = None,
    sigma_tol: Optional[float] = None,
    kappa: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> ExhaustiveResult:
    """Intersect q*(p) and p*(q) computed over a uniform grid.

    Points (p, q*(p)) and (p*(q), q) closer than sigma_tol in L1 are paired at
    their midpoint; nearby pairings are merged. sigma_tol defaults to three
    grid steps, enough to bridge the grid when the exact crossing falls
    between grid points.
    """
    settings = settings or get_settings()
    sigma = sigma_tol if sigma_tol is not None else 3 * eps_grid
    log = bind_logger(logger, {"agent_name": "scheduler_service", "op": "nash_exhaustive", "grid": eps_grid})
    grid = unit_grid(eps_grid)

    q_curve = best_response_curve(model, Player.P2, grid, eta2, kappa, settings, threads)
    p_curve = best_response_curve(model, Player.P1, grid, eta1, kappa, settings, threads)

    # curve 1: (p_i, q*(p_i)); curve 2: (p*(q_j), q_j)
    p1 = np.array(q_curve.grid)[:, None]
    q1 = np.array(q_curve.responses)[:, None]
    p2 = np.array(p_curve.responses)[None, :]
    q2 = np.array(p_curve.grid)[None, :]
    gap = np.abs(p1 - p2) + np.abs(q1 - q2)
    with np.errstate(invalid="ignore"):
        hits = np.argwhere(gap < sigma)
    candidates = [
        (float(0.5 * (p1[i, 0] + p2[0, j])), float(0.5 * (q1[i, 0] + q2[0, j])), float(gap[i, j])) for i, j in hits
    ]
    pairs = _cluster(candidates, 2 * sigma)

    advisory = ""
    if not pairs:
        advisory = f"no intersection within sigma={sigma:g}; refine the grid step (currently {eps_grid:g})"
        log.warning(advisory)
    log.info("exhaustive search finished", extra={"pairs": pairs})
    return ExhaustiveResult(p_curve=p_curve, q_curve=q_curve, ne_pairs=pairs, advisory=advisory)


def nash_iterative(
    model: SolverModel,
    eps: Optional[float] = None,
    eta1: Optional[float] = None,
    eta2: Optional[float] = None,
    init: Tuple[float, float] = (0.5, 0.5),
    kappa: Optional[float] = None,
    max_outer: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
) -> NashResult:
    """Alternating best responses, P1 first, each warm-started at its previous value."""
    settings = settings or get_settings()
    eps = eps if eps is not None else settings.eps
    max_outer = max_outer if max_outer is not None else settings.max_outer_iters
    log = bind_logger(logger, {"agent_name": "scheduler_service", "op": "nash_iterative", "init": list(init)})

    p_prev, q_prev = _clip(init[0]), _clip(init[1])
    trace = [(p_prev, q_prev)]
    inner_ok = True

    def sweep(p_start: float, q_start: float) -> Tuple[float, float]:
        nonlocal inner_ok
        br1 = best_response(model, Player.P1, q_start, eta1, kappa, init=p_start, settings=settings)
        br2 = best_response(model, Player.P2, br1.value, eta2, kappa, init=q_start, settings=settings)
        inner_ok = inner_ok and br1.converged and br2.converged
        return br1.value, br2.value

    p, q = sweep(p_prev, q_prev)
    trace.append((p, q))
    k = 1
    while max(abs(p - p_prev), abs(q - q_prev)) > eps:
        if k >= max_outer:
            log.warning("outer iteration cap reached", extra={"p": p, "q": q})
            return NashResult(
                p_star=p, q_star=q, costs=costs_at(model, p, q, settings), iterations=k, trace=trace,
                method=NashMethod.iterative, converged=False, init=init,
            )
        p_prev, q_prev = p, q
        p, q = sweep(p_prev, q_prev)
        trace.append((p, q))
        k += 1

    log.info("iterative search converged", extra={"p_star": p, "q_star": q, "iterations": k})
    return NashResult(
        p_star=p, q_star=q, costs=costs_at(model, p, q, settings), iterations=k, trace=trace,
        method=NashMethod.iterative, converged=inner_ok, init=init,
    )


def _dominates(a: CostPair, b: CostPair) -> bool:
    no_worse = a.J1 <= b.J1 and a.J2 >= b.J2
    return no_worse and (a.J1 < b.J1 or a.J2 > b.J2)


def nash_multistart(
    model: SolverModel,
    n_starts: int = 10,
    seed: int = 0,
    merge_tol: float = 0.02,
    eps: Optional[float] = None,
    eta1: Optional[float] = None,
    eta2: Optional[float] = None,
    kappa: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> MultiStartResult:
    """nash_iterative from random starts, distinct fixed points and which of them dominate which."""
    settings = settings or get_settings()
    rng = np.random.default_rng(seed)
    inits = [(float(a), float(b)) for a, b in rng.uniform(0.0, 1.0, size=(n_starts, 2))]
    runs = run_parallel(
        lambda init: nash_iterative(model, eps, eta1, eta2, init, kappa, settings=settings),
        inits,
        threads,
        label="multistart",
    )

    equilibria: List[NashResult] = []
    for run in runs:
        if not run.converged:
            continue
        if all(max(abs(run.p_star - e.p_star), abs(run.q_star - e.q_star)) > merge_tol for e in equilibria):
            equilibria.append(run)

    dominance = [
        (i, j)
        for i, a in enumerate(equilibria)
        for j, b in enumerate(equilibria)
        if i != j and _dominates(a.costs, b.costs)
    ]
    bind_logger(logger, {"agent_name": "scheduler_service", "op": "nash_multistart"}).info(
        "multistart finished", extra={"starts": n_starts, "distinct": len(equilibria)}
    )
    return MultiStartResult(runs=runs, equilibria=equilibria, dominance=dominance)


def deviation_scan(
    model: SolverModel,
    p_star: float,
    q_star: float,
    grid: float = 0.005,
    tol: float = 1e-3,
    settings: Optional[SolverSettings] = None,
) -> DeviationReport:
    """Check that neither player gains more than tol by a unilateral grid deviation."""
    settings = settings or get_settings()
    base = costs_at(model, p_star, q_star, settings)
    if not base.converged:
        return DeviationReport(passed=False, p1_gain=math.inf, p2_gain=math.inf, best_p=p_star, best_q=q_star)

    values = unit_grid(grid)
    J1 = np.array([costs_at(model, p, q_star, settings).J1 for p in values])
    J2 = np.array([costs_at(model, p_star, q, settings).J2 for q in values])
    i, j = int(np.argmin(J1)), int(np.argmax(J2))
    p1_gain = float(base.J1 - J1[i])
    p2_gain = float(J2[j] - base.J2)
    return DeviationReport(
        passed=p1_gain <= tol and p2_gain <= tol,
        p1_gain=p1_gain,
        p2_gain=p2_gain,
        best_p=values[i],
        best_q=values[j],
    )


# --- Cost-weight sweep ---

def sweep_lambda(
    model: SolverModel,
    lambda11_grid: Sequence[float],
    lambda22_grid: Sequence[float],
    eps: Optional[float] = None,
    eta1: Optional[float] = None,
    eta2: Optional[float] = None,
    kappa: Optional[float] = None,
    init: Tuple[float, float] = (0.5, 0.5),
    settings: Optional[SolverSettings] = None,
    threads: Optional[int] = None,
) -> List[SweepRow]:
    """Nash equilibrium over a (lambda11, lambda22) grid.

    Each lambda22 column runs on its own thread and walks lambda11 upward,
    warm-starting every cell from the previous cell's equilibrium. Rows come
    back ordered by (lambda11, lambda22).
    """
    settings = settings or get_settings()
    l11s = [float(v) for v in lambda11_grid]
    l22s = [float(v) for v in lambda22_grid]
    if any(v <= 0 for v in l11s + l22s):
        raise DomainError("sweep grids must be strictly positive")

    def column(l22: float) -> List[SweepRow]:
        start = init
        rows = []
        for l11 in l11s:
            res = nash_iterative(model.with_lambda(l11, l22), eps, eta1, eta2, start, kappa, settings=settings)
            rows.append(SweepRow(lambda11=l11, lambda22=l22, p_star=res.p_star, q_star=res.q_star, converged=res.converged, iterations=res.iterations))
            start = (res.p_star, res.q_star)
        return rows

    columns = run_parallel(column, l22s, threads, label="sweep")
    return [columns[j][i] for i in range(len(l11s)) for j in range(len(l22s))]


def trend_fraction(rows: Sequence[SweepRow], tol: float = 0.0) -> Tuple[float, float]:
    """Fractions of unit steps with p* nondecreasing in lambda11 and q* nondecreasing in lambda22."""
    table = {(r.lambda11, r.lambda22): r for r in rows}
    l11s = sorted({r.lambda11 for r in rows})
    l22s = sorted({r.lambda22 for r in rows})

    p_steps = [
        table[(b, l22)].p_star >= table[(a, l22)].p_star - tol
        for l22 in l22s
        for a, b in zip(l11s, l11s[1:])
    ]
    q_steps = [
        table[(l11, b)].q_star >= table[(l11, a)].q_star - tol
        for l11 in l11s
        for a, b in zip(l22s, l22s[1:])
    ]
    frac = lambda steps: float(np.mean(steps)) if steps else 1.0  # noqa: E731
    return frac(p_steps), frac(q_steps)
