from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import orjson
from pydantic import ValidationError
from scipy import linalg as sla

from netgame.config import SolverSettings, get_settings
from netgame.errors import ConfigError, DomainError, NumericError, RiccatiError, SpecValidationError
from netgame.logging_config import bind_logger, get_logger
from netgame.models.schemas import DiscretizedModel, GameSpec, RiccatiSolution, SolverModel, ValidationReport
from netgame.utils.linalg import (
    ensure_finite,
    is_pd,
    is_psd,
    is_symmetric,
    pbh_observable,
    pbh_stabilizable,
    psd_sqrt,
    symmetrize,
)

logger = get_logger(__name__)


# --- Ingestion ---

def parse_spec(raw: Union[str, bytes]) -> GameSpec:
    """Parse a GameSpec JSON document. Unknown keys and malformed values are ConfigErrors."""
    try:
        data = orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e}", {"line": e.lineno, "column": e.colno}) from e
    if not isinstance(data, dict):
        raise ConfigError("game spec must be a JSON object")
    try:
        return GameSpec.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid game spec: {problems}") from e


def load_spec(path: Union[str, Path]) -> GameSpec:
    path = Path(path)
    log = bind_logger(logger, {"agent_name": "model_service", "spec_path": str(path)})
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read spec file {path}: {e.strerror or e}") from e
    spec = parse_spec(raw)
    log.info("loaded game spec", extra={"n": spec.n, "h": spec.h})
    return spec


# --- Validation ---

def _check_dimensions(spec: GameSpec) -> None:
    n = spec.A.shape[0]
    if spec.A.shape != (n, n):
        raise SpecValidationError(f"A must be square, got {spec.A.shape}")

    def mismatch(pair: str, got, want) -> SpecValidationError:
        return SpecValidationError(f"dimension mismatch between {pair}: got {got}, expected {want}")

    if spec.B1.shape[0] != n:
        raise mismatch("A and B1", spec.B1.shape, f"({n}, m1)")
    if spec.B2.shape[0] != n:
        raise mismatch("A and B2", spec.B2.shape, f"({n}, m2)")
    if spec.G.shape[0] != n:
        raise mismatch("A and G", spec.G.shape, f"({n}, n_w)")
    if spec.Q.shape != (n, n):
        raise mismatch("A and Q", spec.Q.shape, (n, n))
    m1, m2 = spec.B1.shape[1], spec.B2.shape[1]
    if spec.R1.shape != (m1, m1):
        raise mismatch("B1 and R1", spec.R1.shape, (m1, m1))
    if spec.R2.shape != (m2, m2):
        raise mismatch("B2 and R2", spec.R2.shape, (m2, m2))
    if spec.Sigma0.shape != (n, n):
        raise mismatch("A and Sigma0", spec.Sigma0.shape, (n, n))
    for name in ("A", "B1", "B2", "G", "Q", "R1", "R2", "Sigma0"):
        if not np.all(np.isfinite(getattr(spec, name))):
            raise SpecValidationError(f"{name} has non-finite entries")


def validate_spec(spec: GameSpec, settings: Optional[SolverSettings] = None) -> ValidationReport:
    """PBH checks for (A, B1) stabilizable and (A, Q^1/2) observable, plus weight sanity.

    Dimension problems raise SpecValidationError; everything else is reported.
    """
    settings = settings or get_settings()
    log = bind_logger(logger, {"agent_name": "model_service", "op": "validate_spec"})
    _check_dimensions(spec)

    messages = []
    weights_ok = True
    for name, want_pd in (("Q", False), ("R1", True), ("R2", True), ("Sigma0", False)):
        W = getattr(spec, name)
        if not is_symmetric(W):
            weights_ok = False
            messages.append(f"{name} is not symmetric")
            continue
        if want_pd and not is_pd(W, settings.psd_tol):
            weights_ok = False
            messages.append(f"{name} is not positive definite")
        elif not want_pd and not is_psd(W, settings.psd_tol):
            weights_ok = False
            messages.append(f"{name} is not positive semidefinite")

    stabilizable = pbh_stabilizable(spec.A, spec.B1, settings.pbh_rtol)
    if not stabilizable:
        messages.append("(A, B1) is not stabilizable")

    try:
        q_half = psd_sqrt(spec.Q, settings.psd_tol)
        observable = pbh_observable(spec.A, q_half, settings.pbh_rtol)
        if not observable:
            messages.append("(A, Q^1/2) is not observable")
    except NumericError:
        observable = False
        messages.append("Q not PSD: Q^1/2 undefined, observability not tested")

    report = ValidationReport(stabilizable=stabilizable, observable=observable, weights_ok=weights_ok, messages=messages)
    if report.passed:
        log.info("spec passed validation")
    else:
        log.warning("spec failed validation", extra={"messages": messages})
    return report


# --- Matrix exponentials and integrals ---

def matrix_exponential(M: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(M t) by scaling and squaring with a Pade approximant (scipy.linalg.expm)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DomainError(f"matrix exponential needs a square matrix, got {M.shape}")
    if not np.isfinite(t):
        raise NumericError("matrix exponential time must be finite")
    ensure_finite(M, "matrix exponential argument")
    return ensure_finite(sla.expm(M * t), "matrix exponential")


def noise_gramian(F: np.ndarray, G: np.ndarray, h: float) -> np.ndarray:
    """int_0^h e^{F s} G G^T e^{F^T s} ds by Van Loan's block exponential."""
    d = F.shape[0]
    M = np.block([[-F, G @ G.T], [np.zeros((d, d)), F.T]])
    E = matrix_exponential(M, h)
    return symmetrize(E[d:, d:].T @ E[:d, d:])


def weighted_gramians(F: np.ndarray, W: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Return (int_0^h e^{F^T s} W e^{F s} ds, int_0^h int_0^t e^{F^T u} W e^{F u} du dt).

    Both come out of one 3x3-block exponential of
    [[-F^T, I, 0], [0, -F^T, W], [0, 0, F]].
    """
    d = F.shape[0]
    Z, I = np.zeros((d, d)), np.eye(d)
    C = np.block([[-F.T, I, Z], [Z, -F.T, W], [Z, Z, F]])
    E = matrix_exponential(C, h)
    F3T = E[2 * d:, 2 * d:].T
    single = F3T @ E[d:2 * d, 2 * d:]
    double = F3T @ E[:d, 2 * d:]
    return symmetrize(single), symmetrize(double)


def error_drift(spec: GameSpec, riccati: RiccatiSolution) -> np.ndarray:
    """Stacked drift of (e1, e2): [[A + S2 P, -S2 P], [S1 P, A - S1 P]] with Si P = P^{-1} Lambda_i."""
    P, A = riccati.P, spec.A
    S1P = np.linalg.solve(P, riccati.Lambda1)
    S2P = np.linalg.solve(P, riccati.Lambda2)
    return np.block([[A + S2P, -S2P], [S1P, A - S1P]])


def discretize(spec: GameSpec, riccati: RiccatiSolution, settings: Optional[SolverSettings] = None) -> DiscretizedModel:
    """Exact discretization of the coupled estimation errors at step spec.h."""
    settings = settings or get_settings()
    log = bind_logger(logger, {"agent_name": "model_service", "op": "discretize", "h": spec.h})
    h = spec.h
    if not h > 0:
        raise DomainError(f"step h must be positive, got {h}")
    P = riccati.P
    if np.linalg.cond(P) > settings.cond_max:
        raise RiccatiError("controller gain undefined: P is singular", {"cond": float(np.linalg.cond(P))})

    n = spec.n
    A_bar = error_drift(spec, riccati)
    G_bar = np.vstack([spec.G, spec.G])
    Phi = matrix_exponential(A_bar, h)

    Lam = sla.block_diag(riccati.Lambda1, -riccati.Lambda2)
    Lambda_bar, K = weighted_gramians(A_bar, Lam, h)
    phi = float(np.trace(G_bar.T @ K @ G_bar))

    W = noise_gramian(A_bar, G_bar, h)

    disc = DiscretizedModel(
        h=h,
        A_bar=A_bar,
        G_bar=G_bar,
        Phi11=Phi[:n, :n],
        Phi12=Phi[:n, n:],
        Phi21=Phi[n:, :n],
        Phi22=Phi[n:, n:],
        Lambda_tilde=Lambda_bar / h,
        phi_over_h=phi / h,
        Gt1=W[:n, :n],
        Gt2=W[:n, n:],
        Gt3=W[n:, n:],
    )
    log.info("discretized error dynamics", extra={"phi_over_h": disc.phi_over_h})
    return disc


def build_model(spec: GameSpec, settings: Optional[SolverSettings] = None) -> SolverModel:
    """Validate, solve the game Riccati equation and discretize, once per game."""
    from netgame.services.riccati_service import solve_game_riccati

    settings = settings or get_settings()
    report = validate_spec(spec, settings)
    if not report.passed:
        raise SpecValidationError("; ".join(report.messages), report=report)
    riccati = solve_game_riccati(spec, settings)
    return SolverModel(spec=spec, riccati=riccati, disc=discretize(spec, riccati, settings))
