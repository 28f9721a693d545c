"""Core model types and the least-squares criterion for two-regime regression.

The model is

    y_t = x_t' beta + x_t' delta * 1{f_t' gamma > 0} + eps_t,

where ``x_t`` carries a leading constant 1, ``f_t`` carries a trailing
constant -1, and the scale of ``gamma`` is pinned by ``gamma[0] == 1``.
Ties ``f_t' gamma == 0`` are assigned to regime 0 throughout the package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Dataset",
    "ParamVector",
    "SearchSpace",
    "SolveStatus",
    "EstimationResult",
    "DimensionError",
    "regime_indicator",
    "build_design",
    "ssr",
    "read_matrix_csv",
]

Array = NDArray[np.float64]


class DimensionError(ValueError):
    """Shapes of inputs do not conform."""


def _as_matrix(a, name: str) -> Array:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got ndim={a.ndim}")
    return a


def _as_vector(a, name: str) -> Array:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        a = a.reshape(-1)
    return a


@dataclass(frozen=True)
class Dataset:
    """Observed data: outcome, regressors, and switching information.

    Parameters
    ----------
    y : (T,) array
        Outcome series.
    X : (T, d_x) array
        Regressors; the first column must be identically 1.
    factors : (T, d_f) array, optional
        Observed switching factors; the last column must be identically -1.
    panel : (T, N) array, optional
        Wide panel from which latent factors can be extracted by PCA.
        At least one of ``factors``/``panel`` must be present.
    """

    y: Array
    X: Array
    factors: Array | None = None
    panel: Array | None = None

    def __post_init__(self):
        y = _as_vector(self.y, "y")
        X = _as_matrix(self.X, "X")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.T < 2:
            raise ValueError(f"need T >= 2 observations, got T={self.T}")
        if len(y) != X.shape[0]:
            raise DimensionError(f"y has length {len(y)} but X has {X.shape[0]} rows")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first column of X must be identically 1")
        if self.factors is None and self.panel is None:
            raise ValueError("at least one of factors or panel must be supplied")
        if self.factors is not None:
            F = _as_matrix(self.factors, "factors")
            object.__setattr__(self, "factors", F)
            if F.shape[0] != self.T:
                raise DimensionError(f"factors has {F.shape[0]} rows, expected {self.T}")
            if not np.all(F[:, -1] == -1.0):
                raise ValueError("last column of factors must be identically -1")
        if self.panel is not None:
            P = _as_matrix(self.panel, "panel")
            object.__setattr__(self, "panel", P)
            if P.shape[0] != self.T:
                raise DimensionError(f"panel has {P.shape[0]} rows, expected {self.T}")
        for name in ("y", "X", "factors", "panel"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_f(self) -> int:
        if self.factors is None:
            raise ValueError("dataset has no observed factors")
        return self.factors.shape[1]


@dataclass(frozen=True)
class ParamVector:
    """Coefficients (beta, delta, gamma) with the normalization gamma[0] == 1."""

    beta: Array
    delta: Array
    gamma: Array

    def __post_init__(self):
        for name in ("beta", "delta", "gamma"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        if len(self.beta) != len(self.delta):
            raise DimensionError("beta and delta must have equal length")
        if len(self.gamma) < 1 or self.gamma[0] != 1.0:
            raise ValueError("gamma[0] must equal 1 exactly (scale normalization)")

    @property
    def alpha(self) -> Array:
        """Stacked (beta', delta')'."""
        return np.concatenate([self.beta, self.delta])


@dataclass(frozen=True)
class SearchSpace:
    """Optimization boxes for alpha = (beta', delta')' and gamma2, plus the
    regime-proportion window [tau1, tau2] and the strict-inequality slack.
    """

    alpha_lo: Array
    alpha_hi: Array
    gamma2_lo: Array
    gamma2_hi: Array
    tau1: float = 0.05
    tau2: float = 0.95
    eps_strict: float = 1e-6

    def __post_init__(self):
        for name in ("alpha_lo", "alpha_hi", "gamma2_lo", "gamma2_hi"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        if self.alpha_lo.shape != self.alpha_hi.shape:
            raise DimensionError("alpha_lo and alpha_hi must have equal length")
        if self.gamma2_lo.shape != self.gamma2_hi.shape:
            raise DimensionError("gamma2_lo and gamma2_hi must have equal length")
        if not np.all(self.alpha_lo < self.alpha_hi):
            raise ValueError("alpha box must satisfy alpha_lo < alpha_hi elementwise")
        if np.any(self.gamma2_lo > self.gamma2_hi):
            raise ValueError("gamma2 box must satisfy gamma2_lo <= gamma2_hi")
        if not (0.0 < self.tau1 < self.tau2 < 1.0):
            raise ValueError("require 0 < tau1 < tau2 < 1")
        if not self.eps_strict > 0:
            raise ValueError("eps_strict must be positive")

    @property
    def d_x(self) -> int:
        return len(self.alpha_lo) // 2

    @property
    def d_f(self) -> int:
        return len(self.gamma2_lo) + 1

    @property
    def delta_lo(self) -> Array:
        """Lower bounds L_j of delta implied by the alpha box."""
        return self.alpha_lo[self.d_x:]

    @property
    def delta_hi(self) -> Array:
        """Upper bounds U_j of delta implied by the alpha box."""
        return self.alpha_hi[self.d_x:]

    def count_window(self, T: int) -> tuple[int, int]:
        """Feasible range of sum(d) implied by [tau1, tau2] at sample size T."""
        kmin = int(np.ceil(self.tau1 * T - 1e-9))
        kmax = int(np.floor(self.tau2 * T + 1e-9))
        return kmin, kmax

    def restrict_gamma2(self, keep: NDArray[np.intp]) -> "SearchSpace":
        """Search space with the gamma2 box restricted to column subset ``keep``."""
        return SearchSpace(
            self.alpha_lo, self.alpha_hi,
            self.gamma2_lo[keep], self.gamma2_hi[keep],
            self.tau1, self.tau2, self.eps_strict,
        )


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    TIME_LIMIT = "TimeLimit"
    INFEASIBLE = "Infeasible"


@dataclass
class EstimationResult:
    """Outcome of a two-regime least-squares estimation."""

    params: ParamVector
    objective: float
    d: NDArray[np.int8]
    gap: float
    status: SolveStatus
    wall_time: float
    trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "beta": self.params.beta.tolist(),
            "delta": self.params.delta.tolist(),
            "gamma": self.params.gamma.tolist(),
            "objective": float(self.objective),
            "d": np.asarray(self.d, dtype=int).tolist(),
            "gap": float(self.gap),
            "status": self.status.value,
            "wall_time": float(self.wall_time),
            "trace": [float(v) for v in self.trace],
        }


def regime_indicator(factors, gamma) -> NDArray[np.int8]:
    """Regime labels d_t = 1{f_t' gamma > 0} (strict; ties go to regime 0)."""
    F = _as_matrix(factors, "factors")
    g = _as_vector(gamma, "gamma")
    if F.shape[1] != len(g):
        raise DimensionError(f"factors have {F.shape[1]} columns but gamma has length {len(g)}")
    return (F @ g > 0.0).astype(np.int8)


def build_design(X, d) -> Array:
    """Design matrix with rows (x_t', x_t' d_t) for a regime vector d."""
    X = _as_matrix(X, "X")
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if X.shape[0] != len(d):
        raise DimensionError(f"X has {X.shape[0]} rows but d has length {len(d)}")
    return np.hstack([X, X * d[:, None]])


def ssr(ds: Dataset, p: ParamVector, factors_used) -> float:
    """Least-squares criterion: mean squared residual of the two-regime fit.

    ``factors_used`` is passed explicitly so the same criterion serves
    observed, PCA-estimated, and bootstrap factors.
    """
    F = _as_matrix(factors_used, "factors_used")
    if F.shape[0] != ds.T:
        raise DimensionError(f"factors_used has {F.shape[0]} rows, expected {ds.T}")
    if len(p.beta) != ds.d_x:
        raise DimensionError(f"beta has length {len(p.beta)}, expected {ds.d_x}")
    d = regime_indicator(F, p.gamma)
    resid = ds.y - ds.X @ p.beta - (ds.X @ p.delta) * d
    if not np.all(np.isfinite(resid)):
        raise ValueError("non-finite residuals")
    return float(resid @ resid / ds.T)


def read_matrix_csv(path: str | Path) -> Array:
    """Read one numeric matrix from CSV (comma-separated, optional header row)."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    for tok in first.strip().split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            float(tok)
        except ValueError:
            skip = 1
            break
    out = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2, dtype=np.float64)
    return out
