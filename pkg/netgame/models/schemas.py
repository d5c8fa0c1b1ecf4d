from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, field_validator, model_validator


def _as_matrix(value: Any) -> np.ndarray:
    """Coerce a number or a row-major nested list into a read-only float matrix."""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix given as a list of rows, got an array with {arr.ndim} dimension(s)")
    arr.flags.writeable = False
    return arr


def _as_series(value: Any) -> np.ndarray:
    arr = np.array(value)
    arr.flags.writeable = False
    return arr


Matrix = Annotated[np.ndarray, BeforeValidator(_as_matrix), PlainSerializer(lambda a: a.tolist(), return_type=list)]
Series = Annotated[np.ndarray, BeforeValidator(_as_series), PlainSerializer(lambda a: a.tolist(), return_type=list)]


class FrozenModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# --- Game data ---

class GameSpec(FrozenModel):
    """Continuous-time game data read from a JSON document.

    Keys: A, B1, B2, G, Q, R1, R2, lambda, h, Sigma0. Matrices are row-major
    nested lists (a bare number is accepted as a 1x1 matrix). ``lambda`` is
    [[l11, l12], [l21, l22]]: l11/l12 are P1's cost per own/opponent
    communication, l22/l21 P2's payoff-side weights.
    """

    A: Matrix
    B1: Matrix
    B2: Matrix
    G: Matrix
    Q: Matrix
    R1: Matrix
    R2: Matrix
    lam: Matrix = Field(alias="lambda")
    h: float = Field(gt=0)
    Sigma0: Matrix

    # Strict ingestion: unknown keys are errors
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _check_lambda(self) -> "GameSpec":
        if self.lam.shape != (2, 2):
            raise ValueError(f"lambda must be 2x2, got shape {self.lam.shape}")
        if not (self.lam[0, 0] > 0 and self.lam[1, 1] > 0):
            raise ValueError("own-communication costs lambda11 and lambda22 must be strictly positive")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def with_lambda(self, l11: float, l22: float) -> "GameSpec":
        lam = np.array(self.lam, dtype=float)
        lam[0, 0], lam[1, 1] = l11, l22
        return self.model_copy(update={"lam": _as_matrix(lam)})


class ValidationReport(FrozenModel):
    stabilizable: bool
    observable: bool
    weights_ok: bool = True
    messages: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.stabilizable and self.observable and self.weights_ok


class RiccatiSolution(FrozenModel):
    P: Matrix
    Lambda1: Matrix
    Lambda2: Matrix
    Atilde: Matrix
    Jstar: float
    residual: float = 0.0


class WellPosednessCert(FrozenModel):
    P11tilde: Matrix
    AP: Matrix
    atilde_hurwitz: bool
    ap_hurwitz: bool
    residual: float = 0.0
    # real roots of the scalar quadratic, only filled when n == 1
    scalar_roots: List[float] = Field(default_factory=list)


class DiscretizedModel(FrozenModel):
    """Exact discretization of the stacked estimation-error dynamics at step h."""

    h: float
    A_bar: Matrix
    G_bar: Matrix
    Phi11: Matrix
    Phi12: Matrix
    Phi21: Matrix
    Phi22: Matrix
    Lambda_tilde: Matrix
    phi_over_h: float
    Gt1: Matrix
    Gt2: Matrix
    Gt3: Matrix

    @property
    def n(self) -> int:
        return self.Phi11.shape[0]

    @property
    def Phi(self) -> np.ndarray:
        return np.block([[self.Phi11, self.Phi12], [self.Phi21, self.Phi22]])

    @property
    def G_tilde(self) -> np.ndarray:
        return np.block([[self.Gt1, self.Gt2], [self.Gt2.T, self.Gt3]])


class SchedulingPolicy(FrozenModel):
    """Bernoulli no-communication probabilities; each player transmits with probability 1-p (1-q) per tick."""

    p: float = Field(ge=0.0, le=1.0)
    q: float = Field(ge=0.0, le=1.0)


class CommunicationRates(FrozenModel):
    per_tick1: float
    per_tick2: float
    per_second1: float
    per_second2: float


class CovOperators(FrozenModel):
    """Coefficients of the covariance map X -> sum_i Ai X Ai^T + G(p,q) and their partials.

    ``T2``/``T3`` are the unscaled templates of A2/A3. The sqrt(p(1-p)) factor
    of A2 is not differentiable at p in {0, 1}; there dA2dp (and dA3dq at q in
    {0, 1}) is stored as zero and gradients use the product form instead.
    """

    p: float
    q: float
    A1: Matrix
    A2: Matrix
    A3: Matrix
    Gpq: Matrix
    T2: Matrix
    T3: Matrix
    dA1dp: Matrix
    dA2dp: Matrix
    dA3dp: Matrix
    dGdp: Matrix
    dA1dq: Matrix
    dA2dq: Matrix
    dA3dq: Matrix
    dGdq: Matrix

    @property
    def dim(self) -> int:
        return self.A1.shape[0]

    def stacked(self) -> np.ndarray:
        return np.stack([self.A1, self.A2, self.A3])


class SteadyState(FrozenModel):
    Sigma: Optional[Matrix] = None
    rho: float
    # rho-based tail estimate; certified_bound is the guaranteed one when requested
    bound: float
    tp: int
    converged: bool
    message: str = ""
    residual: Optional[float] = None
    certified_bound: Optional[float] = None


class CostPair(FrozenModel):
    J1: float
    J2: float
    J_tilde_star: float
    trace_term: float
    converged: bool = True
    message: str = ""


class Player(str, Enum):
    P1 = "P1"
    P2 = "P2"


class NashMethod(str, Enum):
    iterative = "iterative"
    exhaustive = "exhaustive"


class BestResponseResult(FrozenModel):
    player: Player
    opponent: float
    value: float
    iterations: int
    converged: bool
    backtracks: int = 0


class BestResponseCurve(FrozenModel):
    player: Player
    grid: List[float]
    # NaN where the response could not be computed (divergent covariance)
    responses: List[float]


class NashResult(FrozenModel):
    p_star: float
    q_star: float
    costs: Optional[CostPair] = None
    iterations: int
    trace: List[Tuple[float, float]] = Field(default_factory=list)
    method: NashMethod
    converged: bool
    init: Optional[Tuple[float, float]] = None


class ExhaustiveResult(FrozenModel):
    p_curve: BestResponseCurve  # p*(q), P1's response over the q grid
    q_curve: BestResponseCurve  # q*(p), P2's response over the p grid
    ne_pairs: List[Tuple[float, float]]
    advisory: str = ""


class DeviationReport(FrozenModel):
    passed: bool
    p1_gain: float
    p2_gain: float
    best_p: float
    best_q: float


class MultiStartResult(FrozenModel):
    runs: List[NashResult]
    equilibria: List[NashResult]
    # (i, j) means equilibria[i] is better than equilibria[j]
    dominance: List[Tuple[int, int]] = Field(default_factory=list)


class SweepRow(FrozenModel):
    lambda11: float
    lambda22: float
    p_star: float
    q_star: float
    converged: bool
    iterations: int


class TrajectoryLog(FrozenModel):
    times: Series
    x: Series
    xhat1: Series
    xhat2: Series
    e1: Series
    e2: Series
    u1: Series
    u2: Series
    gamma1: Series
    gamma2: Series
    seed: int


class EnsembleStats(FrozenModel):
    """Time-and-ensemble averages after burn-in; standard errors are across members."""

    Sigma: Matrix
    stderr: Matrix
    quadratic: float
    quadratic_stderr: float
    rate1: float
    rate2: float
    ensemble: int
    ticks: int
    burn_in: int
    h: float


class EmpiricalCosts(FrozenModel):
    """Per-second time averages; ``rate*`` are communications per second."""

    quadratic: float
    rate1: float
    rate2: float
    J1: float
    J2: float
    h: float

    def per_tick(self, lam: np.ndarray) -> CostPair:
        """Re-express with the lambda terms per tick, the units of the analytic costs."""
        p_bar, q_bar = self.rate1 * self.h, self.rate2 * self.h
        return CostPair(
            J1=self.quadratic + lam[0, 0] * p_bar + lam[0, 1] * q_bar,
            J2=self.quadratic - lam[1, 0] * p_bar - lam[1, 1] * q_bar,
            J_tilde_star=float("nan"),
            trace_term=float("nan"),
        )


class RunConfig(FrozenModel):
    """What a CLI invocation was asked to do; echoed into the run manifest."""

    command: str
    spec_path: Path
    out_dir: Optional[Path] = None
    seed: Optional[int] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("spec_path")
    @classmethod
    def _spec_exists(cls, value: Path) -> Path:
        if not value.is_file():
            raise ValueError(f"spec file not found: {value}")
        return value


class SolverModel(FrozenModel):
    """Everything the scheduler needs, solved once per game."""

    spec: GameSpec
    riccati: RiccatiSolution
    disc: DiscretizedModel

    def with_lambda(self, l11: float, l22: float) -> "SolverModel":
        return self.model_copy(update={"spec": self.spec.with_lambda(l11, l22)})
