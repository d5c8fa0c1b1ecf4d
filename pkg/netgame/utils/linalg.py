"""Small dense linear-algebra helpers shared by the services."""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from netgame.errors import NumericError


def symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def is_symmetric(X: np.ndarray, tol: float = 1e-10) -> bool:
    return X.shape[0] == X.shape[1] and np.allclose(X, X.T, rtol=0.0, atol=tol * max(1.0, np.abs(X).max(initial=0.0)))


def min_eig(X: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(X)).min())


def is_psd(X: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    return min_eig(X) >= -tol * scale


def is_pd(X: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    return min_eig(X) > tol * scale


def psd_sqrt(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root; eigenvalues below -tol are rejected, small negatives are clipped."""
    w, V = np.linalg.eigh(symmetrize(X))
    if w.size and w.min() < -tol:
        raise NumericError("matrix is not positive semidefinite", {"min_eigenvalue": float(w.min())})
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def numerical_rank(M: np.ndarray, rtol: float = 1e-9) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def pbh_stabilizable(A: np.ndarray, B: np.ndarray, rtol: float = 1e-9) -> bool:
    """Rank [A - lambda I, B] = n at every eigenvalue with nonnegative real part."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        if numerical_rank(np.hstack([A - lam * np.eye(n), B]), rtol) < n:
            return False
    return True


def pbh_observable(A: np.ndarray, C: np.ndarray, rtol: float = 1e-9) -> bool:
    """Rank [A - lambda I; C] = n at every eigenvalue of A."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if numerical_rank(np.vstack([A - lam * np.eye(n), C]), rtol) < n:
            return False
    return True


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.linalg.eigvals(M).real.max())


def weight_inverse(B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """B R^{-1} B^T, through a Cholesky factor of R."""
    c = sla.cho_factor(R)
    return symmetrize(B @ sla.cho_solve(c, B.T))


def kron_operator(mats: np.ndarray) -> np.ndarray:
    """Matrix of X -> sum_i Ai X Ai^T acting on row-major vec(X)."""
    return sum(np.kron(Ai, Ai) for Ai in mats)


def sym_permutation(d: int) -> np.ndarray:
    """Index map sending row-major vec(X) to vec(X^T)."""
    return np.arange(d * d).reshape(d, d).T.reshape(-1)


def ensure_finite(X: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(X)):
        raise NumericError(f"non-finite entries in {what}")
    return X
