"""Mixed-integer optimization problem and solution containers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from ..model import SolveStatus

__all__ = ["MioProblem", "MioSolution", "SolverConfig"]

Array = NDArray[np.float64]

_EIG_CHECK_MAX_N = 400  # eager psd validation only for small problems


@dataclass
class MioProblem:
    """min 0.5 x'Qx + c'x + obj_const  s.t.  b_lo <= A x <= b_hi, x_lo <= x <= x_hi,
    x[i] binary for i in binary_idx.

    Q may be None for a linear objective; Q and A may be dense or scipy.sparse.
    Two-sided rows admit +-inf entries in b_lo / b_hi.
    """

    Q: sp.spmatrix | Array | None
    c: Array
    A: sp.spmatrix | Array
    b_lo: Array
    b_hi: Array
    x_lo: Array
    x_hi: Array
    binary_idx: NDArray[np.intp]
    obj_const: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.n
        if self.A is None or (not sp.issparse(self.A) and np.size(self.A) == 0):
            self.A = sp.csr_matrix((0, n))
        else:
            self.A = sp.csr_matrix(self.A)
        if self.Q is not None:
            self.Q = sp.csr_matrix(self.Q)
            if self.Q.shape != (n, n):
                raise ValueError("Q shape does not match c")
        self.b_lo = np.asarray(self.b_lo, dtype=np.float64).reshape(-1)
        self.b_hi = np.asarray(self.b_hi, dtype=np.float64).reshape(-1)
        self.x_lo = np.asarray(self.x_lo, dtype=np.float64).reshape(-1)
        self.x_hi = np.asarray(self.x_hi, dtype=np.float64).reshape(-1)
        self.binary_idx = np.asarray(self.binary_idx, dtype=np.intp).reshape(-1)
        m = self.A.shape[0]
        if not (len(self.b_lo) == len(self.b_hi) == m):
            raise ValueError("row bound lengths do not match A")
        if not (len(self.x_lo) == len(self.x_hi) == n):
            raise ValueError("variable bound lengths do not match c")
        if np.any(self.b_lo > self.b_hi + 1e-12):
            raise ValueError("b_lo > b_hi on some row")
        if np.any(self.x_lo > self.x_hi + 1e-12):
            raise ValueError("x_lo > x_hi on some variable")
        if len(self.binary_idx):
            if self.binary_idx.min() < 0 or self.binary_idx.max() >= n:
                raise ValueError("binary index out of range")
            if np.any(self.x_lo[self.binary_idx] < -1e-12) or np.any(self.x_hi[self.binary_idx] > 1 + 1e-12):
                raise ValueError("binary variables must have bounds within [0, 1]")
        if self.Q is not None and n <= _EIG_CHECK_MAX_N:
            self.check_psd()

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective_value(self, x: Array) -> float:
        v = float(self.c @ x) + self.obj_const
        if self.Q is not None:
            v += 0.5 * float(x @ (self.Q @ x))
        return v

    def check_psd(self, tol: float = 1e-8) -> None:
        """Raise if Q is asymmetric or has an eigenvalue below -tol."""
        if self.Q is None:
            return
        Qd = self.Q.toarray()
        if not np.allclose(Qd, Qd.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        w = np.linalg.eigvalsh(Qd)
        if w.min() < -tol:
            raise ValueError(f"Q is not psd: min eigenvalue {w.min():.3e}")

    def max_violation(self, x: Array) -> float:
        """Largest constraint/bound violation at x."""
        v = 0.0
        if self.m:
            r = self.A @ x
            v = max(v, float(np.max(self.b_lo - r, initial=0.0)), float(np.max(r - self.b_hi, initial=0.0)))
        v = max(v, float(np.max(self.x_lo - x, initial=0.0)), float(np.max(x - self.x_hi, initial=0.0)))
        return v

    def interval_infeasible(self) -> bool:
        """Cheap certificate: some row's attainable interval misses [b_lo, b_hi]."""
        if np.any(self.x_lo > self.x_hi + 1e-12):
            return True
        if not self.m:
            return False
        Ap = self.A.maximum(0)
        An = self.A.minimum(0)
        hi = Ap @ self.x_hi + An @ self.x_lo
        lo = Ap @ self.x_lo + An @ self.x_hi
        return bool(np.any(hi < self.b_lo - 1e-9) or np.any(lo > self.b_hi + 1e-9))


@dataclass
class MioSolution:
    x: Array
    objective: float
    bound: float
    gap: float
    status: SolveStatus
    nodes_explored: int = 0


@dataclass
class SolverConfig:
    """Limits and tolerances for the branch-and-bound engine."""

    time_limit: float = 60.0
    gap_tol: float = 1e-6
    node_limit: int = 200_000
    relaxation_tol: float = 1e-9
    relaxation_max_iter: int = 20_000
    heuristic_period: int = 10  # rounding heuristic runs every this many nodes
    seed: int = 0

    def __post_init__(self):
        for name in ("time_limit", "gap_tol", "node_limit", "relaxation_tol",
                     "relaxation_max_iter", "heuristic_period"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
