from __future__ import annotations

from functools import lru_cache
from typing import Literal

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv(override=False)


class SolverSettings(BaseSettings):
    """Numerical defaults. Every field can be overridden with a NETGAME_<FIELD> env var or a CLI flag.

    Defaults reproduce the reference runs: tp=400 and eta1=eta2=eps=kappa=1e-4.
    """

    model_config = SettingsConfigDict(env_prefix="NETGAME_", extra="ignore", frozen=True)

    tp: int = Field(400, ge=0)
    eta1: float = Field(1e-4, gt=0)
    eta2: float = Field(1e-4, gt=0)
    eps: float = Field(1e-4, gt=0)
    kappa: float = Field(1e-4, gt=0)
    max_inner_iters: int = Field(1_000_000, ge=1)
    max_outer_iters: int = Field(10_000, ge=1)
    # 2n at or below which rho comes from dense eigenvalues of the Kronecker matrix
    kron_dense_max_dim: int = Field(12, ge=1)
    power_iter_tol: float = Field(1e-12, gt=0)
    power_iter_max: int = Field(100_000, ge=1)
    steady_state_method: Literal["neumann", "direct"] = "neumann"
    sde_scheme: Literal["euler", "exact"] = "euler"
    burn_in_fraction: float = Field(0.1, ge=0, lt=1)
    hurwitz_tol: float = Field(1e-10, gt=0)
    pbh_rtol: float = Field(1e-9, gt=0)
    psd_tol: float = Field(1e-10, gt=0)
    cond_max: float = Field(1e12, gt=1)
    # relative to ||H||_2; defective eigenvalues on the axis come back perturbed by about sqrt(eps)*||H||
    imag_axis_tol: float = Field(1e-6, gt=0)
    backtrack_max: int = Field(60, ge=1)


@lru_cache(maxsize=1)
def get_settings() -> SolverSettings:
    return SolverSettings()
