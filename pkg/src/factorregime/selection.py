"""l0-penalized selection of threshold factors.

Adds on/off binaries gating candidate factor coefficients to the joint
estimation program, penalizes the active count, and re-estimates using only
the selected factors. Candidates are gamma2 coordinates; the normalized
first factor and the trailing constant are always active.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .model import Dataset, EstimationResult, ParamVector, SearchSpace, SolveStatus
from .optim import MioProblem, SolverConfig, branch_and_bound, scan_cells
from .estimator import (MiqpForm, _check_factors, build_miqp, estimate_exact,
                        estimate_miqp, make_ssr_value, MiqpLayout)

__all__ = ["SelectionConfig", "default_lambda", "select_factors"]

Array = NDArray[np.float64]


@dataclass
class SelectionConfig:
    """Penalty and support bounds for factor selection.

    ``candidates`` lists gamma2 coordinate indices (0-based within gamma2,
    i.e. factor columns 1..d_f-2 map to gamma2 indices 0..d_f-3) that may be
    switched off; coordinates in ``forced_active`` and the constant's
    coefficient are never penalized.
    """

    lam: float
    p_lo: int = 0
    p_hi: int | None = None
    candidates: list[int] = field(default_factory=list)
    forced_active: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        p = len(self.candidates)
        if self.p_hi is None:
            self.p_hi = p
        if not (0 <= self.p_lo <= self.p_hi <= max(p, 0)):
            raise ValueError("require 0 <= p_lo <= p_hi <= number of candidates")
        if set(self.candidates) & set(self.forced_active):
            raise ValueError("candidates and forced_active overlap")


def default_lambda(ds: Dataset, pilot: EstimationResult) -> float:
    """Penalty sigma2 * log(T) / T from the pilot fit's residual variance."""
    sigma2 = float(pilot.objective)
    if sigma2 == 0.0:
        warnings.warn("pilot residual variance is zero; selection is unpenalized")
    return sigma2 * np.log(ds.T) / ds.T


def _subset_value(ds: Dataset, F: Array, space: SearchSpace,
                  keep_g2: NDArray[np.intp]) -> float:
    """Exact min of S_T over gamma with gamma2 support restricted to keep_g2."""
    cols = np.concatenate([[0], keep_g2 + 1]).astype(np.intp)
    Fs = F[:, cols]
    sub_space = space.restrict_gamma2(keep_g2)
    mom, value = make_ssr_value(ds.X, ds.y)
    res = scan_cells(Fs, sub_space, mom, value)
    return np.inf if res is None else res.value


def select_factors(ds: Dataset, factors, space: SearchSpace,
                   sel: SelectionConfig, solver_cfg: SolverConfig | None = None,
                   backend: str = "auto", reestimate: str = "auto",
                   pilot: EstimationResult | None = None
                   ) -> tuple[list[int], EstimationResult]:
    """Solve the penalized program and re-estimate on the selected support.

    Returns the sorted active gamma2 index set (always-active coordinates
    included) and the post-selection estimate, whose gamma carries exact
    zeros on dropped coordinates.

    ``backend='enumerate'`` scans candidate supports with the exact cell
    oracle (each support must leave at most 3 free dimensions);
    ``backend='bnb'`` solves the augmented mixed-integer program directly.
    """
    F = _check_factors(ds, factors)
    k = F.shape[1] - 1
    cand = np.asarray(sorted(sel.candidates), dtype=np.intp)
    if len(cand) and (cand.min() < 0 or cand.max() >= k):
        raise ValueError("candidate index out of range for gamma2")
    always = np.asarray(sorted(set(range(k)) - set(sel.candidates)), dtype=np.intp)
    if backend == "auto":
        backend = "enumerate" if k <= 3 else "bnb"

    if backend == "enumerate":
        best = None
        for size in range(sel.p_lo, sel.p_hi + 1):
            for sub in combinations(cand.tolist(), size):
                keep = np.asarray(sorted(set(sub) | set(always.tolist())), dtype=np.intp)
                if pilot is not None and len(keep) == k:
                    val = float(pilot.objective) + sel.lam * size
                else:
                    val = _subset_value(ds, F, space, keep) + sel.lam * size
                key = (val, size, sub)
                if best is None or key < best:
                    best = key
        if best is None or not np.isfinite(best[0]):
            raise RuntimeError("no feasible support under the tau window")
        active_cand = list(best[2])
    else:
        active_cand = _select_bnb(ds, F, space, sel, cand, solver_cfg)

    keep = np.asarray(sorted(set(active_cand) | set(always.tolist())), dtype=np.intp)
    result = _reestimate(ds, F, space, keep, solver_cfg, reestimate)
    return sorted(keep.tolist()), result


def _reestimate(ds: Dataset, F: Array, space: SearchSpace,
                keep: NDArray[np.intp], solver_cfg: SolverConfig | None,
                method: str) -> EstimationResult:
    cols = np.concatenate([[0], keep + 1]).astype(np.intp)
    Fs = F[:, cols]
    sub_space = space.restrict_gamma2(keep)
    if method == "auto":
        method = "exact" if len(keep) <= 3 else "miqp"
    if method == "exact":
        res = estimate_exact(ds, Fs, sub_space)
    else:
        res = estimate_miqp(ds, Fs, sub_space, MiqpForm.ALTERNATIVE,
                            solver_cfg or SolverConfig())
    k = F.shape[1] - 1
    gamma = np.zeros(k + 1)
    gamma[0] = 1.0
    gamma[keep + 1] = res.params.gamma[1:]
    params = ParamVector(res.params.beta, res.params.delta, gamma)
    out = EstimationResult(params, res.objective, res.d, res.gap, res.status,
                           res.wall_time, res.trace)
    return out


def _select_bnb(ds: Dataset, F: Array, space: SearchSpace, sel: SelectionConfig,
                cand: NDArray[np.intp], solver_cfg: SolverConfig | None) -> list[int]:
    """Augmented MIQP: gate candidate gamma2 coordinates with binaries e_m."""
    base = build_miqp(ds, F, space, MiqpForm.BASIC)
    lay = MiqpLayout(ds.d_x, F.shape[1] - 1, ds.T, MiqpForm.BASIC)
    p = len(cand)
    n0 = base.n
    n = n0 + p
    Q = sp.bmat([[base.Q, None], [None, sp.csr_matrix((p, p))]], format="csr")
    c = np.concatenate([base.c, np.full(p, sel.lam)])
    lo2 = space.gamma2_lo[cand]
    hi2 = space.gamma2_hi[cand]
    rows, cols_, vals, blo, bhi = [], [], [], [], []
    r = 0
    for m, j in enumerate(cand):
        gidx = lay.gamma2.start + int(j)
        # e_m * lo <= gamma_2m   and   gamma_2m <= e_m * hi
        rows += [r, r]
        cols_ += [gidx, n0 + m]
        vals += [1.0, -lo2[m]]
        blo.append(0.0)
        bhi.append(np.inf)
        r += 1
        rows += [r, r]
        cols_ += [gidx, n0 + m]
        vals += [1.0, -hi2[m]]
        blo.append(-np.inf)
        bhi.append(0.0)
        r += 1
    rows += [r] * p
    cols_ += list(range(n0, n0 + p))
    vals += [1.0] * p
    blo.append(float(sel.p_lo))
    bhi.append(float(sel.p_hi))
    r += 1
    A_extra = sp.csr_matrix((vals, (rows, cols_)), shape=(r, n))
    A = sp.vstack([sp.hstack([base.A, sp.csr_matrix((base.m, p))], format="csr"),
                   A_extra], format="csr")
    x_lo = np.concatenate([base.x_lo, np.zeros(p)])
    x_hi = np.concatenate([base.x_hi, np.ones(p)])
    binaries = np.concatenate([base.binary_idx, np.arange(n0, n0 + p)])
    prob = MioProblem(Q, c, A, np.concatenate([base.b_lo, blo]),
                      np.concatenate([base.b_hi, bhi]), x_lo, x_hi, binaries,
                      obj_const=base.obj_const)
    sol = branch_and_bound(prob, solver_cfg or SolverConfig())
    if sol.status is SolveStatus.INFEASIBLE:
        raise RuntimeError("selection program infeasible")
    e = np.round(sol.x[n0:]).astype(int)
    return [int(cand[m]) for m in range(p) if e[m] == 1]
