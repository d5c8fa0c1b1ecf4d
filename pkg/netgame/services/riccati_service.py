from __future__ import annotations

from typing import List, Optional

import numpy as np
from scipy import linalg as sla

from netgame.config import SolverSettings, get_settings
from netgame.errors import RiccatiError, WellPosednessError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import GameSpec, RiccatiSolution, WellPosednessCert
from netgame.utils.linalg import ensure_finite, is_psd, min_eig, spectral_abscissa, symmetrize, weight_inverse

logger = get_logger(__name__)

NEWTON_MAX_STEPS = 8


def check_hurwitz(M: np.ndarray, tol: float = 1e-10) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return spectral_abscissa(M) < -tol


def care_residual(A: np.ndarray, S: np.ndarray, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """A^T X + X A + Q - X S X."""
    return A.T @ X + X @ A + Q - X @ S @ X


def solve_hamiltonian_care(A: np.ndarray, S: np.ndarray, Q: np.ndarray, settings: Optional[SolverSettings] = None) -> np.ndarray:
    """Stabilizing solution X of A^T X + X A + Q - X S X = 0 (S, Q symmetric, either sign).

    The stable invariant subspace [U1; U2] of [[A, -S], [-Q, -A^T]] comes from an
    ordered real Schur form and gives X = U2 U1^{-1}; a few Newton steps on the
    Lyapunov equation of A - S X then polish the residual.
    """
    settings = settings or get_settings()
    n = A.shape[0]
    H = np.block([[A, -S], [-Q, -A.T]])
    ensure_finite(H, "Hamiltonian")

    eig = np.linalg.eigvals(H)
    axis_gap = float(np.abs(eig.real).min())
    if axis_gap <= settings.imag_axis_tol * max(1.0, np.linalg.norm(H, 2)):
        raise RiccatiError(
            "game not well posed / no stabilizing solution: Hamiltonian has eigenvalues on the imaginary axis",
            {"min_abs_real_part": axis_gap},
        )

    _, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError("game not well posed / no stabilizing solution: stable subspace has wrong dimension", {"sdim": int(sdim), "n": n})
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > settings.cond_max:
        raise RiccatiError("no stabilizing solution: stable subspace is not a graph over the state")
    X = symmetrize(np.linalg.solve(U1.T, U2.T).T)

    res = np.linalg.norm(care_residual(A, S, Q, X))
    for _ in range(NEWTON_MAX_STEPS):
        if res <= 1e-14 * (1.0 + np.linalg.norm(X) ** 2):
            break
        Ac = A - S @ X
        delta = sla.solve_continuous_lyapunov(Ac.T, -care_residual(A, S, Q, X))
        X_new = symmetrize(X + delta)
        res_new = np.linalg.norm(care_residual(A, S, Q, X_new))
        if not np.isfinite(res_new) or res_new >= res:
            break
        X, res = X_new, res_new
    return X


def _residual_ok(res: float, X: np.ndarray) -> bool:
    return res <= 1e-8 * (1.0 + np.linalg.norm(X, 2) ** 2)


def solve_game_riccati(spec: GameSpec, settings: Optional[SolverSettings] = None) -> RiccatiSolution:
    """Stabilizing PSD solution of A^T P + P A + Q + P (S2 - S1) P = 0."""
    settings = settings or get_settings()
    log = bind_logger(logger, {"agent_name": "riccati_service", "op": "solve_game_riccati", "n": spec.n})

    S1 = weight_inverse(spec.B1, spec.R1)
    S2 = weight_inverse(spec.B2, spec.R2)
    P = solve_hamiltonian_care(spec.A, S1 - S2, spec.Q, settings)

    residual = float(np.linalg.norm(care_residual(spec.A, S1 - S2, spec.Q, P)))
    if not is_psd(P, settings.psd_tol):
        raise RiccatiError(
            "minimal PSD solution not found",
            {"residual": residual, "min_eigenvalue": min_eig(P)},
        )
    if not _residual_ok(residual, P):
        raise RiccatiError("game Riccati residual above tolerance", {"residual": residual})

    Atilde = spec.A - (S1 - S2) @ P
    if not check_hurwitz(Atilde, settings.hurwitz_tol):
        raise RiccatiError("game not well posed / no stabilizing solution: closed-loop matrix is not Hurwitz", {"spectral_abscissa": spectral_abscissa(Atilde)})

    sol = RiccatiSolution(
        P=P,
        Lambda1=symmetrize(P @ S1 @ P),
        Lambda2=symmetrize(P @ S2 @ P),
        Atilde=Atilde,
        Jstar=float(np.trace(P @ spec.G @ spec.G.T)),
        residual=residual,
    )
    log.info("solved game Riccati equation", extra={"Jstar": sol.Jstar, "residual": residual})
    return sol


def _scalar_roots(spec: GameSpec, S2: np.ndarray) -> List[float]:
    # -S2 x^2 + 2 A x - Q = 0
    a, s, q = float(spec.A[0, 0]), float(S2[0, 0]), float(spec.Q[0, 0])
    roots = np.roots([-s, 2 * a, -q]) if s != 0 else np.roots([2 * a, -q])
    return sorted(float(r.real) for r in np.atleast_1d(roots) if abs(r.imag) <= 1e-12 * max(1.0, abs(r)))


def solve_wellposedness_are(
    spec: GameSpec,
    riccati: Optional[RiccatiSolution] = None,
    settings: Optional[SolverSettings] = None,
) -> WellPosednessCert:
    """Nonpositive stabilizing solution of X A + A^T X - Q - X S2 X = 0 plus the Hurwitz checks.

    For n == 1 every real root of the scalar quadratic is reported in the
    error details (or the certificate) so a failed branch can be inspected.
    """
    settings = settings or get_settings()
    log = bind_logger(logger, {"agent_name": "riccati_service", "op": "solve_wellposedness_are"})
    riccati = riccati or solve_game_riccati(spec, settings)

    S2 = weight_inverse(spec.B2, spec.R2)
    roots = _scalar_roots(spec, S2) if spec.n == 1 else []
    failure = "well-posedness condition fails: maximizer can drive cost unbounded"

    try:
        X = solve_hamiltonian_care(spec.A, S2, -spec.Q, settings)
    except RiccatiError as e:
        log.warning("no stabilizing solution for the well-posedness equation", extra={"roots": roots})
        raise WellPosednessError(f"{failure} ({e.message})", {"scalar_roots": roots, **e.details}) from e

    residual = float(np.linalg.norm(care_residual(spec.A, S2, -spec.Q, X)))
    if float(np.linalg.eigvalsh(X).max()) > settings.psd_tol * max(1.0, np.abs(X).max()):
        log.warning("stabilizing solution is not nonpositive", extra={"roots": roots})
        raise WellPosednessError(
            f"{failure} (stabilizing solution is not nonpositive definite)",
            {"scalar_roots": roots, "max_eigenvalue": float(np.linalg.eigvalsh(X).max())},
        )
    if not _residual_ok(residual, X):
        raise WellPosednessError(f"{failure} (residual {residual:.3g} above tolerance)", {"scalar_roots": roots})

    AP = spec.A - S2 @ X
    cert = WellPosednessCert(
        P11tilde=X,
        AP=AP,
        atilde_hurwitz=check_hurwitz(riccati.Atilde, settings.hurwitz_tol),
        ap_hurwitz=check_hurwitz(AP, settings.hurwitz_tol),
        residual=residual,
        scalar_roots=roots,
    )
    log.info("well-posedness certificate", extra={"atilde_hurwitz": cert.atilde_hurwitz, "ap_hurwitz": cert.ap_hurwitz})
    return cert
