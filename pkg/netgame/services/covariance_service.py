"""Stacked estimation-error covariance under Bernoulli scheduling.

The covariance of (e1, e2) just after the scheduling decisions evolves as

    Sigma_{k+1} = A1 Sigma_k A1^T + A2 Sigma_k A2^T + A3 Sigma_k A3^T + G(p, q)

and the steady state is the fixed point of that affine map. Vectorization is
row-major throughout: vec(A X B) = (A kron B^T) vec(X).
"""
from __future__ import annotations

import math
from typing import Literal, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from netgame.config import SolverSettings, get_settings
from netgame.errors import NumericError, SteadyStateDivergenceError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import CovOperators, DiscretizedModel, SchedulingPolicy, SteadyState
from netgame.utils.linalg import kron_operator, sym_permutation, symmetrize

logger = get_logger(__name__)

# shifts of the eigenmatrix tried by certified_tail_bound, relative to its norm
CERTIFY_SHIFTS = (1e-8, 1e-6, 1e-4, 1e-2, 1e-1, 1.0)


def build_operators(disc: DiscretizedModel, policy: SchedulingPolicy) -> CovOperators:
    p, q = policy.p, policy.q
    n = disc.n
    Z = np.zeros((n, n))
    top = np.block([[disc.Phi11, disc.Phi12], [Z, Z]])
    bottom = np.block([[Z, Z], [disc.Phi21, disc.Phi22]])
    zero = np.zeros((2 * n, 2 * n))

    sp, sq = math.sqrt(p * (1 - p)), math.sqrt(q * (1 - q))
    # d/dp sqrt(p(1-p)); infinite at the endpoints, stored as zero there
    dsp = (1 - 2 * p) / (2 * sp) if sp > 0 else 0.0
    dsq = (1 - 2 * q) / (2 * sq) if sq > 0 else 0.0

    G1, G2, G3 = disc.Gt1, disc.Gt2, disc.Gt3
    return CovOperators(
        p=p,
        q=q,
        A1=p * top + q * bottom,
        A2=sp * top,
        A3=sq * bottom,
        Gpq=symmetrize(np.block([[p * G1, p * q * G2], [p * q * G2.T, q * G3]])),
        T2=top,
        T3=bottom,
        dA1dp=top,
        dA2dp=dsp * top,
        dA3dp=zero,
        dGdp=np.block([[G1, q * G2], [q * G2.T, Z]]),
        dA1dq=bottom,
        dA2dq=zero,
        dA3dq=dsq * bottom,
        dGdq=np.block([[Z, p * G2], [p * G2.T, G3]]),
    )


def apply_operator(ops: CovOperators, X: np.ndarray) -> np.ndarray:
    """X -> sum_i Ai X Ai^T."""
    As = ops.stacked()
    return (As @ X @ As.transpose(0, 2, 1)).sum(axis=0)


def kron_matrix(ops: CovOperators) -> np.ndarray:
    return kron_operator(ops.stacked())


def _power_iterate(ops: CovOperators, settings: SolverSettings) -> Tuple[float, np.ndarray]:
    """(rho, X) with X the unit-norm PSD iterate reached from the identity."""
    X = np.eye(ops.dim) / math.sqrt(ops.dim)
    rho = 0.0
    for _ in range(settings.power_iter_max):
        Y = symmetrize(apply_operator(ops, X))
        norm = np.linalg.norm(Y)
        if norm == 0.0:
            return 0.0, X
        rho_new = norm / np.linalg.norm(X)
        X = Y / norm
        if abs(rho_new - rho) <= settings.power_iter_tol * max(1.0, rho_new):
            return float(rho_new), X
        rho = rho_new
    return float(rho), X


def spectral_radius_power(ops: CovOperators, settings: Optional[SolverSettings] = None) -> float:
    """Power iteration on the operator form, started from the identity.

    The map is completely positive, so its spectral radius is attained on the
    PSD cone and the iteration from I converges to it.
    """
    return _power_iterate(ops, settings or get_settings())[0]


def spectral_radius(ops: CovOperators, settings: Optional[SolverSettings] = None) -> float:
    """Largest eigenvalue magnitude of sum_i Ai kron Ai."""
    settings = settings or get_settings()
    if ops.dim <= settings.kron_dense_max_dim:
        return float(np.abs(np.linalg.eigvals(kron_matrix(ops))).max())
    return spectral_radius_power(ops, settings)


def _neumann_sum(ops: CovOperators, C: np.ndarray, tp: int, settings: SolverSettings) -> np.ndarray:
    """sum_{j=0}^{tp} T^j(C) with every term symmetrized."""
    d = ops.dim
    if d <= settings.kron_dense_max_dim:
        T = kron_matrix(ops)
        perm = sym_permutation(d)
        y = C.reshape(-1)
        total = y.copy()
        for _ in range(tp):
            y = T @ y
            y = 0.5 * (y + y[perm])
            total += y
        return symmetrize(total.reshape(d, d))

    Y = C
    total = C.copy()
    for _ in range(tp):
        Y = symmetrize(apply_operator(ops, Y))
        total += Y
    return symmetrize(total)


def _direct_solve(ops: CovOperators, C: np.ndarray, settings: SolverSettings) -> np.ndarray:
    d = ops.dim
    M = np.eye(d * d) - kron_matrix(ops)
    if np.linalg.cond(M) > settings.cond_max:
        raise NumericError("no unique bounded solution: I - sum_i Ai kron Ai is singular")
    return symmetrize(np.linalg.solve(M, C.reshape(-1)).reshape(d, d))


def truncation_bound(C: np.ndarray, rho: float, tp: int) -> float:
    """||C||_2 rho^(tp+1) / (1 - rho); zero when C vanishes.

    An estimate of the dropped tail. It holds when the operator is normal but
    can undershoot by a transient factor otherwise; see certified_tail_bound.
    """
    norm = float(np.linalg.norm(C, 2))
    if norm == 0.0:
        return 0.0
    return norm * rho ** (tp + 1) / (1.0 - rho)


def certified_tail_bound(
    ops: CovOperators,
    C: np.ndarray,
    tp: int,
    settings: Optional[SolverSettings] = None,
) -> float:
    """Guaranteed bound on ||sum_{j>tp} T^j(C)||_2 for PSD C.

    For any W > 0 with T(W) <= r W and C <= a W (Loewner order) positivity of T
    gives T^j(C) <= a r^j W, hence a tail below a r^(tp+1) / (1 - r) ||W||_2.
    W is the power-iteration eigenmatrix shifted by a few multiples of I; the
    tightest shift wins. Returns inf when no shift gives r < 1.
    """
    settings = settings or get_settings()
    if float(np.linalg.norm(C, 2)) == 0.0:
        return 0.0
    _, V = _power_iterate(ops, settings)
    eye = np.eye(ops.dim)
    TV, TI = apply_operator(ops, V), apply_operator(ops, eye)
    scale = float(np.linalg.norm(V, 2))
    best = math.inf
    for shift in CERTIFY_SHIFTS:
        delta = shift * scale
        W = symmetrize(V + delta * eye)
        try:
            r = float(sla.eigh(symmetrize(TV + delta * TI), W, eigvals_only=True).max())
            a = float(sla.eigh(symmetrize(C), W, eigvals_only=True).max())
        except np.linalg.LinAlgError:
            continue
        r = max(r, 0.0)
        if r >= 1.0:
            continue
        best = min(best, max(a, 0.0) * r ** (tp + 1) / (1.0 - r) * float(np.linalg.norm(W, 2)))
    return best


def fixed_point_residual(ops: CovOperators, Sigma: np.ndarray) -> float:
    """||Sigma - T(Sigma) - G(p, q)||_F."""
    return float(np.linalg.norm(Sigma - apply_operator(ops, Sigma) - ops.Gpq))


def steady_state_neumann(
    ops: CovOperators,
    tp: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
    strict: bool = True,
    certify: bool = False,
) -> SteadyState:
    """Truncated Neumann series for the steady-state covariance.

    With rho >= 1 it raises SteadyStateDivergenceError, or with strict=False
    returns an unconverged SteadyState without Sigma. ``certify`` adds the
    guaranteed tail bound, which costs a power iteration.
    """
    settings = settings or get_settings()
    tp = settings.tp if tp is None else tp
    log = bind_logger(logger, {"agent_name": "covariance_service", "p": ops.p, "q": ops.q, "tp": tp})
    rho = spectral_radius(ops, settings)
    if rho >= 1.0:
        err = SteadyStateDivergenceError(rho)
        log.warning(err.message)
        if strict:
            raise err
        return SteadyState(Sigma=None, rho=rho, bound=math.inf, tp=tp, converged=False, message=err.message)

    Sigma = _neumann_sum(ops, ops.Gpq, tp, settings)
    bound = truncation_bound(ops.Gpq, rho, tp)
    certified = certified_tail_bound(ops, ops.Gpq, tp, settings) if certify else None
    residual = fixed_point_residual(ops, Sigma)
    log.debug("neumann steady state", extra={"rho": rho, "bound": bound, "certified_bound": certified, "residual": residual})
    return SteadyState(
        Sigma=Sigma, rho=rho, bound=bound, tp=tp, converged=True,
        residual=residual, certified_bound=certified,
    )


def steady_state_direct(ops: CovOperators, settings: Optional[SolverSettings] = None) -> np.ndarray:
    """Dense solve of (I - sum_i Ai kron Ai) vec(Sigma) = vec(G(p, q))."""
    return _direct_solve(ops, ops.Gpq, settings or get_settings())


def steady_state(
    ops: CovOperators,
    tp: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
) -> SteadyState:
    """Steady state by the configured method; divergence always raises."""
    settings = settings or get_settings()
    if settings.steady_state_method == "neumann":
        return steady_state_neumann(ops, tp, settings)
    rho = spectral_radius(ops, settings)
    if rho >= 1.0:
        raise SteadyStateDivergenceError(rho)
    Sigma = steady_state_direct(ops, settings)
    return SteadyState(
        Sigma=Sigma, rho=rho, bound=0.0, tp=0, converged=True,
        residual=fixed_point_residual(ops, Sigma), certified_bound=0.0,
    )


def iterate_covariance(ops: CovOperators, Sigma0: np.ndarray, k: int) -> np.ndarray:
    Sigma = np.array(Sigma0, dtype=float)
    for _ in range(k):
        Sigma = symmetrize(apply_operator(ops, Sigma) + ops.Gpq)
    return Sigma


def cesaro_average(ops: CovOperators, Sigma0: np.ndarray, m: int) -> np.ndarray:
    """(1/m) sum_{k=0}^{m-1} Sigma_k, the time-average definition of the steady state."""
    Sigma = np.array(Sigma0, dtype=float)
    total = np.zeros_like(Sigma)
    for _ in range(m):
        total += Sigma
        Sigma = symmetrize(apply_operator(ops, Sigma) + ops.Gpq)
    return total / m


def forcing_term(ops: CovOperators, Sigma: np.ndarray, which: Literal["p", "q"]) -> np.ndarray:
    """Partial derivative of sum_i Ai Sigma Ai^T + G(p, q) with Sigma held fixed.

    The A2 (A3) contribution is written as d/dp [p(1-p)] T2 Sigma T2^T so it
    stays finite on the boundary of the unit square.
    """
    A1 = ops.A1
    if which == "p":
        dA1, dG = ops.dA1dp, ops.dGdp
        sq_term = (1 - 2 * ops.p) * (ops.T2 @ Sigma @ ops.T2.T)
    else:
        dA1, dG = ops.dA1dq, ops.dGdq
        sq_term = (1 - 2 * ops.q) * (ops.T3 @ Sigma @ ops.T3.T)
    K = dA1 @ Sigma @ A1.T + A1 @ Sigma @ dA1.T + sq_term + dG
    return symmetrize(K)


def grad_sigma(
    ops: CovOperators,
    Sigma: np.ndarray,
    which: Literal["p", "q"],
    tp: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
    rho: Optional[float] = None,
) -> np.ndarray:
    """Solve Sigma' = sum_i Ai Sigma' Ai^T + K for the steady-state derivative in p or q."""
    settings = settings or get_settings()
    tp = settings.tp if tp is None else tp
    rho = spectral_radius(ops, settings) if rho is None else rho
    if rho >= 1.0:
        raise SteadyStateDivergenceError(rho)
    K = forcing_term(ops, Sigma, which)
    if settings.steady_state_method == "direct":
        return _direct_solve(ops, K, settings)
    return _neumann_sum(ops, K, tp, settings)
