"""Estimation programs for the two-regime model.

Builds and solves the joint mixed-integer quadratic program (two equivalent
formulations), an exact cell-enumeration backend, the block-coordinate
descent loop alternating an integer linear step for (gamma, d) with
closed-form least squares for alpha, plus the regime-classification error
and the heteroskedasticity-robust covariance of the slope estimates.
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .model import (Dataset, DimensionError, EstimationResult, ParamVector,
                    SearchSpace, SolveStatus, build_design, regime_indicator, ssr)
from .optim import MioProblem, SolverConfig, branch_and_bound, scan_cells

__all__ = [
    "MiqpForm",
    "BcdConfig",
    "EstimationError",
    "DegenerateDesignWarning",
    "compute_Mt",
    "build_miqp",
    "estimate_miqp",
    "estimate_exact",
    "ols_given_gamma",
    "bcd",
    "classification_error",
    "alpha_covariance",
    "default_search_space",
]

Array = NDArray[np.float64]


class EstimationError(RuntimeError):
    """Estimation could not be completed."""


class DegenerateDesignWarning(UserWarning):
    """A regime is empty or the design is rank deficient."""


class MiqpForm(enum.Enum):
    BASIC = "Basic"
    ALTERNATIVE = "Alternative"


@dataclass
class BcdConfig:
    """Time budgets for block coordinate descent."""

    max_time_1: float = 60.0   # joint MIQP warm start
    max_time_2: float = 10.0   # each MILP step
    max_outer_iter: int = 50

    def __post_init__(self):
        if self.max_time_1 <= 0 or self.max_time_2 <= 0 or self.max_outer_iter <= 0:
            raise ValueError("BCD time budgets and iteration cap must be positive")


# ---------------------------------------------------------------------------
# shared least-squares machinery
# ---------------------------------------------------------------------------

def _check_factors(ds: Dataset, factors) -> Array:
    F = np.asarray(factors, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != ds.T:
        raise DimensionError(f"factors must be ({ds.T}, d_f)")
    if not np.allclose(F[:, -1], -1.0):
        raise ValueError("factors must carry -1 in the last column")
    return F


def ssr_moments(X: Array, y: Array) -> Array:
    """Per-row moment matrix whose regime-1 aggregate determines the fit."""
    iu0, iu1 = np.triu_indices(X.shape[1])
    return np.hstack([X[:, iu0] * X[:, iu1], X * y[:, None], (y * y)[:, None]])


def _unpack_moments(M: Array, d_x: int):
    nxx = d_x * (d_x + 1) // 2
    iu0, iu1 = np.triu_indices(d_x)
    n = M.shape[0]
    Sxx = np.zeros((n, d_x, d_x))
    Sxx[:, iu0, iu1] = M[:, :nxx]
    Sxx[:, iu1, iu0] = M[:, :nxx]
    return Sxx, M[:, nxx:nxx + d_x], M[:, nxx + d_x]


def _regime_ssr(M: Array, d_x: int) -> Array:
    """Exact OLS SSR within one regime from aggregated moments."""
    if d_x == 1:
        a, p, s = M[:, 0], M[:, 1], M[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = s - p * p / a
        return np.where(a > 0, out, np.where(np.abs(s) > 0, s, 0.0))
    if d_x == 2:
        a, b, c0, p, q, s = (M[:, i] for i in range(6))
        det = a * c0 - b * b
        scale = np.maximum(a * c0, 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            full = s - (c0 * p * p - 2 * b * p * q + a * q * q) / det
        bad = ~(det > 1e-12 * scale)
        if np.any(bad):
            full = full.copy()
            full[bad] = _regime_ssr_pinv(M[bad], 2)
        return full
    return _regime_ssr_pinv(M, d_x)


def _regime_ssr_pinv(M: Array, d_x: int) -> Array:
    Sxx, Sxy, Syy = _unpack_moments(M, d_x)
    w, U = np.linalg.eigh(Sxx)
    wmax = np.maximum(w.max(axis=1, keepdims=True), 1e-300)
    winv = np.where(w > 1e-12 * wmax, 1.0 / np.maximum(w, 1e-300), 0.0)
    rot = np.einsum("nij,nj->ni", U.transpose(0, 2, 1), Sxy)
    return Syy - np.einsum("ni,ni->n", rot * winv, rot)


def make_ssr_value(X: Array, y: Array):
    """(moments, value_fn) computing the mean two-regime SSR from cell moments."""
    mom = ssr_moments(X, y)
    tot = mom.sum(axis=0)
    T = len(y)
    d_x = X.shape[1]

    def value(M1: Array, cnt) -> Array:
        return (_regime_ssr(M1, d_x) + _regime_ssr(tot - M1, d_x)) / T

    return mom, value


# ---------------------------------------------------------------------------
# big-M bounds
# ---------------------------------------------------------------------------

def compute_Mt(f_t, space: SearchSpace) -> float:
    """max over the gamma box of |f_t' gamma| with gamma_1 = 1, in closed form."""
    f = np.asarray(f_t, dtype=np.float64).reshape(-1)
    if len(f) != space.d_f:
        raise DimensionError(f"f_t has length {len(f)}, expected {space.d_f}")
    lo_part = f[1:] * space.gamma2_lo
    hi_part = f[1:] * space.gamma2_hi
    u = f[0] + np.maximum(lo_part, hi_part).sum()
    l = f[0] + np.minimum(lo_part, hi_part).sum()
    return float(max(abs(u), abs(l)))


def _big_m(F: Array, space: SearchSpace) -> Array:
    lo_part = F[:, 1:] * space.gamma2_lo
    hi_part = F[:, 1:] * space.gamma2_hi
    u = F[:, 0] + np.maximum(lo_part, hi_part).sum(axis=1)
    l = F[:, 0] + np.minimum(lo_part, hi_part).sum(axis=1)
    return np.maximum(np.abs(u), np.abs(l))


# ---------------------------------------------------------------------------
# MIQP construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MiqpLayout:
    """Index map of the flattened decision vector (beta, delta, gamma2, d, ell)."""

    d_x: int
    k: int
    T: int
    form: MiqpForm

    @property
    def n(self) -> int:
        return 2 * self.d_x + self.k + self.T + self.T * self.d_x

    @property
    def beta(self) -> slice:
        return slice(0, self.d_x)

    @property
    def delta(self) -> slice:
        return slice(self.d_x, 2 * self.d_x)

    @property
    def gamma2(self) -> slice:
        return slice(2 * self.d_x, 2 * self.d_x + self.k)

    @property
    def d(self) -> slice:
        o = 2 * self.d_x + self.k
        return slice(o, o + self.T)

    @property
    def ell(self) -> slice:
        o = 2 * self.d_x + self.k + self.T
        return slice(o, o + self.T * self.d_x)

    def pack(self, beta: Array, delta: Array, gamma2: Array, d: Array,
             space: SearchSpace) -> Array:
        """Assemble a feasible decision vector from model-space quantities."""
        x = np.zeros(self.n)
        x[self.beta] = beta
        x[self.gamma2] = gamma2
        x[self.d] = d
        if self.form is MiqpForm.BASIC:
            x[self.delta] = delta
            ell = np.outer(d, delta)
        else:
            dt = delta - space.delta_lo
            x[self.delta] = dt
            ell = np.outer(d, dt)
        x[self.ell] = ell.ravel()
        return x

    def unpack(self, x: Array, space: SearchSpace):
        beta = x[self.beta].copy()
        if self.form is MiqpForm.BASIC:
            delta = x[self.delta].copy()
        else:
            delta = x[self.delta] + space.delta_lo
        return beta, delta, x[self.gamma2].copy(), x[self.d].copy()


def build_miqp(ds: Dataset, factors, space: SearchSpace,
               form: MiqpForm = MiqpForm.BASIC) -> MioProblem:
    """Assemble the joint estimation program as a mixed-integer QP.

    The decision vector is (beta, delta, gamma2, d_1..d_T, ell) in the Basic
    form and (beta, delta_tilde, gamma2, d, ell_tilde) in the Alternative
    form, whose shifted variables are nonnegative and whose coupling rows are
    aggregated across regressors. Nonnegative sides of aggregated rows are
    carried by the variable bounds. Objective values equal the mean squared
    residual (the quadratic expansion keeps the constant term).
    """
    F = _check_factors(ds, factors)
    if space.d_f != F.shape[1] or space.d_x != ds.d_x:
        raise DimensionError("search space dimensions do not match data")
    T, d_x = ds.T, ds.d_x
    k = F.shape[1] - 1
    lay = MiqpLayout(d_x, k, T, form)
    n = lay.n
    X, y = ds.X, ds.y
    M = _big_m(F, space)
    eps = space.eps_strict
    L, U = space.delta_lo, space.delta_hi

    # quadratic objective (1/T)||y - B z||^2
    rows, cols, vals = [], [], []
    t_idx = np.arange(T)
    for j in range(d_x):
        rows.append(t_idx)
        cols.append(np.full(T, j))
        vals.append(X[:, j])
        rows.append(t_idx)
        cols.append(lay.ell.start + t_idx * d_x + j)
        vals.append(X[:, j])
    if form is MiqpForm.ALTERNATIVE:
        xL = X @ L
        rows.append(t_idx)
        cols.append(lay.d.start + t_idx)
        vals.append(xL)
    B = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(T, n))
    Q = (2.0 / T) * (B.T @ B)
    c = np.asarray(-(2.0 / T) * (B.T @ y)).ravel()
    const = float(y @ y) / T

    ar, ac, av, blo, bhi = [], [], [], [], []
    row = 0

    # big-M linking rows, one pair per observation
    F2 = F[:, 1:]
    f1 = F[:, 0]
    g_cols = np.arange(lay.gamma2.start, lay.gamma2.stop)
    for t in range(T):
        nz = np.nonzero(F2[t])[0]
        # upper: f2' g2 - M_t d_t <= -f1_t
        ar += [row] * (len(nz) + 1)
        ac += list(g_cols[nz]) + [lay.d.start + t]
        av += list(F2[t, nz]) + [-M[t]]
        blo.append(-np.inf)
        bhi.append(-f1[t])
        row += 1
        # lower: f2' g2 - (M_t+eps) d_t >= -f1_t - (M_t+eps)
        ar += [row] * (len(nz) + 1)
        ac += list(g_cols[nz]) + [lay.d.start + t]
        av += list(F2[t, nz]) + [-(M[t] + eps)]
        blo.append(-f1[t] - (M[t] + eps))
        bhi.append(np.inf)
        row += 1

    if form is MiqpForm.BASIC:
        for t in range(T):
            for j in range(d_x):
                lidx = lay.ell.start + t * d_x + j
                # d_t L_j <= ell_tj  and  ell_tj <= d_t U_j
                ar += [row, row]
                ac += [lidx, lay.d.start + t]
                av += [1.0, -L[j]]
                blo.append(0.0)
                bhi.append(np.inf)
                row += 1
                ar += [row, row]
                ac += [lidx, lay.d.start + t]
                av += [1.0, -U[j]]
                blo.append(-np.inf)
                bhi.append(0.0)
                row += 1
                # L_j(1-d_t) <= delta_j - ell_tj <= U_j(1-d_t)
                ar += [row, row, row]
                ac += [lay.delta.start + j, lidx, lay.d.start + t]
                av += [1.0, -1.0, L[j]]
                blo.append(L[j])
                bhi.append(np.inf)
                row += 1
                ar += [row, row, row]
                ac += [lay.delta.start + j, lidx, lay.d.start + t]
                av += [1.0, -1.0, U[j]]
                blo.append(-np.inf)
                bhi.append(U[j])
                row += 1
    else:
        span = float(np.sum(U - L))
        for t in range(T):
            for j in range(d_x):
                lidx = lay.ell.start + t * d_x + j
                # ell_tilde_tj <= delta_tilde_j
                ar += [row, row]
                ac += [lidx, lay.delta.start + j]
                av += [1.0, -1.0]
                blo.append(-np.inf)
                bhi.append(0.0)
                row += 1
            lell = [lay.ell.start + t * d_x + j for j in range(d_x)]
            # sum_j ell_tilde_tj <= d_t sum_j (U_j - L_j)
            ar += [row] * (d_x + 1)
            ac += lell + [lay.d.start + t]
            av += [1.0] * d_x + [-span]
            blo.append(-np.inf)
            bhi.append(0.0)
            row += 1
            # sum_j (delta_tilde_j - ell_tilde_tj) <= (1 - d_t) span
            ar += [row] * (2 * d_x + 1)
            ac += [lay.delta.start + j for j in range(d_x)] + lell + [lay.d.start + t]
            av += [1.0] * d_x + [-1.0] * d_x + [span]
            blo.append(-np.inf)
            bhi.append(span)
            row += 1

    # regime-share window
    ar += [row] * T
    ac += list(range(lay.d.start, lay.d.stop))
    av += [1.0] * T
    blo.append(space.tau1 * T)
    bhi.append(space.tau2 * T)
    row += 1

    A = sp.csr_matrix((av, (ar, ac)), shape=(row, n))

    x_lo = np.empty(n)
    x_hi = np.empty(n)
    x_lo[lay.beta] = space.alpha_lo[:d_x]
    x_hi[lay.beta] = space.alpha_hi[:d_x]
    if form is MiqpForm.BASIC:
        x_lo[lay.delta] = L
        x_hi[lay.delta] = U
        ell_lo, ell_hi = np.minimum(L, 0.0), np.maximum(U, 0.0)
    else:
        x_lo[lay.delta] = 0.0
        x_hi[lay.delta] = U - L
        ell_lo, ell_hi = np.zeros(d_x), U - L
    x_lo[lay.gamma2] = space.gamma2_lo
    x_hi[lay.gamma2] = space.gamma2_hi
    x_lo[lay.d] = 0.0
    x_hi[lay.d] = 1.0
    x_lo[lay.ell] = np.tile(ell_lo, T)
    x_hi[lay.ell] = np.tile(ell_hi, T)

    return MioProblem(Q, c, A, np.array(blo), np.array(bhi), x_lo, x_hi,
                      np.arange(lay.d.start, lay.d.stop), obj_const=const)


# ---------------------------------------------------------------------------
# closed-form least squares given gamma
# ---------------------------------------------------------------------------

def ols_given_gamma(ds: Dataset, factors, gamma) -> Array:
    """Closed-form alpha = (beta', delta')' for a fixed threshold direction.

    Degenerate regimes fall back to a reduced regression: the dead block is
    dropped, its delta entries are zeroed, and a warning is emitted.
    """
    F = _check_factors(ds, factors)
    d = regime_indicator(F, gamma)
    return _ols_for_pattern(ds, d)


def _ols_for_pattern(ds: Dataset, d: NDArray[np.int8]) -> Array:
    d_x = ds.d_x
    s = int(d.sum())
    if s == 0 or s == ds.T:
        warnings.warn("regime split is degenerate; delta set to 0", DegenerateDesignWarning)
        beta, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
        return np.concatenate([beta, np.zeros(d_x)])
    Z = build_design(ds.X, d)
    G = Z.T @ Z
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        warnings.warn("two-regime design is rank deficient; using pseudoinverse",
                      DegenerateDesignWarning)
        return np.linalg.pinv(Z) @ ds.y
    return np.linalg.solve(G, Z.T @ ds.y)


# ---------------------------------------------------------------------------
# exact backend
# ---------------------------------------------------------------------------

def estimate_exact(ds: Dataset, factors, space: SearchSpace) -> EstimationResult:
    """Global least squares via exact cell enumeration (d_f - 1 <= 3).

    Every tau-feasible regime pattern is scored by its per-regime OLS fit and
    the minimizer is refit exactly; alpha is clipped to the search box by
    bounded least squares if it exits.
    """
    t0 = time.monotonic()
    F = _check_factors(ds, factors)
    mom, value = make_ssr_value(ds.X, ds.y)
    res = scan_cells(F, space, mom, value)
    if res is None:
        params = ParamVector(np.zeros(ds.d_x), np.zeros(ds.d_x),
                             np.concatenate([[1.0], (space.gamma2_lo + space.gamma2_hi) / 2]))
        return EstimationResult(params, np.inf, np.zeros(ds.T, dtype=np.int8),
                                0.0, SolveStatus.INFEASIBLE, time.monotonic() - t0)
    gamma = np.concatenate([[1.0], res.gamma2])
    alpha = _ols_for_pattern(ds, res.d)
    alpha = _clip_alpha(ds, res.d, alpha, space)
    params = ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma)
    obj = ssr(ds, params, F)
    return EstimationResult(params, obj, res.d, 0.0, SolveStatus.OPTIMAL,
                            time.monotonic() - t0)


def _clip_alpha(ds: Dataset, d: NDArray[np.int8], alpha: Array,
                space: SearchSpace) -> Array:
    if np.all(alpha >= space.alpha_lo - 1e-12) and np.all(alpha <= space.alpha_hi + 1e-12):
        return alpha
    from scipy.optimize import lsq_linear
    Z = build_design(ds.X, d)
    sol = lsq_linear(Z, ds.y, bounds=(space.alpha_lo, space.alpha_hi))
    return sol.x


# ---------------------------------------------------------------------------
# alternating local search (incumbent generator for the MIO engine)
# ---------------------------------------------------------------------------

def _coordinate_gamma_step(ds: Dataset, F: Array, space: SearchSpace,
                           alpha: Array, gamma2: Array) -> tuple[Array, float]:
    """Exact coordinate-wise minimization of S_T(alpha, gamma) over gamma2."""
    T = ds.T
    kmin, kmax = space.count_window(T)
    xb = ds.X @ alpha[:ds.d_x]
    xd = ds.X @ alpha[ds.d_x:]
    cost = xd * xd - 2.0 * (ds.y - xb) * xd   # per-observation cost of d_t = 1
    base = float(np.sum((ds.y - xb) ** 2))
    f1 = F[:, 0]
    F2 = F[:, 1:]
    g = gamma2.copy()
    best = np.inf
    for _ in range(8):
        improved = False
        for j in range(len(g)):
            part = f1 + F2 @ g - F2[:, j] * g[j]
            v = F2[:, j]
            val, gj = _profile_1d(part, v, cost, space.gamma2_lo[j],
                                  space.gamma2_hi[j], kmin, kmax)
            if val is not None and val < best - 1e-15 * (1 + abs(best)):
                best = val
                g[j] = gj
                improved = True
        if not improved:
            break
    if not np.isfinite(best):
        return g, np.inf
    return g, (base + best) / T


def _profile_1d(part: Array, v: Array, cost: Array, lo: float, hi: float,
                kmin: int, kmax: int) -> tuple[float | None, float]:
    """Minimize sum(cost[d]) over 1-D cells d = 1{part + g*v > 0}, g in [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.where(np.abs(v) > 1e-300, -part / v, np.nan)
    bp = bp[np.isfinite(bp)]
    bp = bp[(bp > lo) & (bp < hi)]
    cand = np.unique(np.concatenate([[lo, hi], bp]))
    mids = np.concatenate([cand, (cand[:-1] + cand[1:]) / 2.0]) if len(cand) > 1 else cand
    Dm = (part[None, :] + mids[:, None] * v[None, :]) > 0
    cnt = Dm.sum(axis=1)
    vals = Dm @ cost
    feas = (cnt >= kmin) & (cnt <= kmax)
    if not feas.any():
        return None, lo
    vals = np.where(feas, vals, np.inf)
    j = int(np.argmin(vals))
    return float(vals[j]), float(mids[j])


def _exhaustive_1d(ds: Dataset, F: Array, space: SearchSpace):
    """Profiled search over the single free gamma coordinate.

    Sorts the breakpoints -f1_t / f2_t, scores every tau-feasible interval by
    its per-regime least-squares fit, and returns the interval midpoint. Kept
    deliberately separate from the cell-enumeration oracle: this is the primal
    heuristic handed to the MIO engine.
    """
    f1, f2 = F[:, 0], F[:, 1]
    lo, hi = float(space.gamma2_lo[0]), float(space.gamma2_hi[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.where(np.abs(f2) > 1e-300, -f1 / f2, np.nan)
    bp = bp[np.isfinite(bp)]
    bp = np.unique(bp[(bp > lo) & (bp < hi)])
    edges = np.concatenate([[lo], bp, [hi]])
    cand = np.concatenate([edges, (edges[:-1] + edges[1:]) / 2.0])
    D = (f1[None, :] + cand[:, None] * f2[None, :]) > 0
    cnt = D.sum(axis=1)
    kmin, kmax = space.count_window(ds.T)
    feas = (cnt >= kmin) & (cnt <= kmax)
    if not feas.any():
        return None
    mom, value = make_ssr_value(ds.X, ds.y)
    vals = np.where(feas, value(D.astype(np.float64) @ mom, cnt), np.inf)
    j = int(np.argmin(vals))
    gamma = np.array([1.0, cand[j]])
    d = D[j].astype(np.int8)
    alpha = np.clip(_ols_for_pattern(ds, d), space.alpha_lo, space.alpha_hi)
    val = ssr(ds, ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma), F)
    return val, gamma, d, alpha


def _heuristic_start(ds: Dataset, F: Array, space: SearchSpace,
                     n_starts: int | None = None, seed: int = 0,
                     deadline: float | None = None):
    """Multi-start alternation: exact gamma coordinate steps + OLS alpha steps."""
    rng = np.random.default_rng(seed)
    k = F.shape[1] - 1
    if k == 1:
        out = _exhaustive_1d(ds, F, space)
        if out is not None:
            return out
    if n_starts is None:
        n_starts = 6 + 3 * k
    lo, hi = space.gamma2_lo, space.gamma2_hi
    finite_lo = np.where(np.isfinite(lo), lo, -10.0)
    finite_hi = np.where(np.isfinite(hi), hi, 10.0)
    starts = [np.clip((finite_lo + finite_hi) / 2.0, lo, hi),
              np.clip(np.zeros(k), lo, hi)]
    for _ in range(n_starts):
        starts.append(finite_lo + (finite_hi - finite_lo) * rng.random(k))
    best = None
    for g0 in starts:
        if deadline is not None and time.monotonic() > deadline and best is not None:
            break
        g = np.asarray(g0, dtype=np.float64)
        gamma = np.concatenate([[1.0], g])
        d = regime_indicator(F, gamma)
        alpha = _ols_for_pattern(ds, d) if 0 < d.sum() < ds.T else \
            np.concatenate([np.linalg.lstsq(ds.X, ds.y, rcond=None)[0], np.zeros(ds.d_x)])
        alpha = np.clip(alpha, space.alpha_lo, space.alpha_hi)
        last = np.inf
        for _ in range(20):
            g, val = _coordinate_gamma_step(ds, F, space, alpha, g)
            gamma = np.concatenate([[1.0], g])
            d = regime_indicator(F, gamma)
            kmin, kmax = space.count_window(ds.T)
            if not (kmin <= d.sum() <= kmax):
                break
            alpha = np.clip(_ols_for_pattern(ds, d), space.alpha_lo, space.alpha_hi)
            cur = ssr(ds, ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma), F)
            if cur >= last - 1e-12 * (1 + abs(last)):
                last = min(cur, last)
                break
            last = cur
        if np.isfinite(last) and (best is None or last < best[0]):
            best = (last, gamma, d, alpha)
    return best


# ---------------------------------------------------------------------------
# MIQP front end
# ---------------------------------------------------------------------------

def estimate_miqp(ds: Dataset, factors, space: SearchSpace,
                  form: MiqpForm = MiqpForm.BASIC,
                  cfg: SolverConfig | None = None) -> EstimationResult:
    """Joint estimation through the mixed-integer program.

    The branch-and-bound engine is warm started from an alternating local
    search; the returned regimes and objective are recomputed from the
    returned gamma and checked against the solver's solution.
    """
    cfg = cfg or SolverConfig()
    t0 = time.monotonic()
    F = _check_factors(ds, factors)
    prob = build_miqp(ds, factors, space, form)
    lay = MiqpLayout(ds.d_x, F.shape[1] - 1, ds.T, form)
    warm = _heuristic_start(ds, F, space, seed=cfg.seed,
                            deadline=t0 + 0.35 * cfg.time_limit)
    x0 = None
    if warm is not None:
        _, gamma_w, d_w, alpha_w = warm
        x0 = lay.pack(alpha_w[:ds.d_x], alpha_w[ds.d_x:], gamma_w[1:],
                      d_w.astype(np.float64), space)
    remaining = max(cfg.time_limit - (time.monotonic() - t0), 0.05 * cfg.time_limit)
    sol = branch_and_bound(prob, replace(cfg, time_limit=remaining), warm_start=x0)
    wall = time.monotonic() - t0
    if sol.status is SolveStatus.INFEASIBLE or not np.isfinite(sol.objective):
        params = ParamVector(np.zeros(ds.d_x), np.zeros(ds.d_x),
                             np.concatenate([[1.0], (space.gamma2_lo + space.gamma2_hi) / 2]))
        return EstimationResult(params, np.inf, np.zeros(ds.T, dtype=np.int8),
                                sol.gap, SolveStatus.INFEASIBLE, wall)
    beta, delta, gamma2, d_sol = lay.unpack(sol.x, space)
    gamma = np.concatenate([[1.0], gamma2])
    params = ParamVector(beta, delta, gamma)
    d_re = regime_indicator(F, gamma)
    obj_re = ssr(ds, params, F)
    scale = max(1.0, abs(sol.objective))
    if abs(obj_re - sol.objective) > 1e-6 * scale:
        fixed = _realize_pattern(F, space, gamma, np.round(d_sol).astype(np.int8))
        if fixed is not None:
            gamma = fixed
            params = ParamVector(beta, delta, gamma)
            d_re = regime_indicator(F, gamma)
            obj_re = ssr(ds, params, F)
    if abs(obj_re - sol.objective) > 1e-6 * scale:
        raise EstimationError(
            f"solver regimes inconsistent with returned gamma: "
            f"recomputed {obj_re:.10g} vs solver {sol.objective:.10g}")
    kmin, kmax = space.count_window(ds.T)
    if not (kmin <= int(d_re.sum()) <= kmax):
        d_re = np.round(d_sol).astype(np.int8)
    return EstimationResult(params, obj_re, d_re, sol.gap, sol.status, wall)


def _realize_pattern(F: Array, space: SearchSpace, gamma: Array,
                     d_target: NDArray[np.int8]) -> Array | None:
    """Nudge gamma off tie hyperplanes toward a target pattern."""
    z = F @ gamma
    tied = np.abs(z) <= 1e-9 * (1 + np.abs(z).max())
    if not tied.any():
        return None
    want = np.where(d_target[tied] == 1, 1.0, -1.0)
    G2 = F[tied, 1:]
    try:
        step, *_ = np.linalg.lstsq(G2, want, rcond=None)
    except np.linalg.LinAlgError:
        return None
    for scale in (1e-9, 1e-8, 1e-7):
        g2 = np.clip(gamma[1:] + scale * step, space.gamma2_lo, space.gamma2_hi)
        cand = np.concatenate([[1.0], g2])
        if np.array_equal((F @ cand > 0).astype(np.int8), d_target):
            return cand
    return None


# ---------------------------------------------------------------------------
# MILP step shared by BCD and the bootstrap
# ---------------------------------------------------------------------------

def milp_gamma_step(F: Array, space: SearchSpace, cost: Array,
                    solver_cfg: SolverConfig | None = None,
                    warm: tuple[Array, Array] | None = None,
                    backend: str = "auto"):
    """Minimize (1/T) sum_t cost_t d_t over achievable patterns.

    Returns (gamma, d, value, optimal). ``backend='auto'`` uses the exact cell
    scan for up to three free dimensions (the linear program over one cell is
    constant, so scanning cells solves the integer program exactly) and
    branch and bound otherwise.
    """
    T, d_f = F.shape
    k = d_f - 1
    if backend == "auto":
        backend = "cells" if k <= 3 else "bnb"
    if backend == "cells":
        res = scan_cells(F, space, cost[:, None],
                         lambda M1, cnt: M1[:, 0] / T)
        if res is None:
            return None
        return np.concatenate([[1.0], res.gamma2]), res.d, res.value, True
    cfg = solver_cfg or SolverConfig()
    M = _big_m(F, space)
    eps = space.eps_strict
    n = k + T
    ar, ac, av, blo, bhi = [], [], [], [], []
    row = 0
    for t in range(T):
        nz = np.nonzero(F[t, 1:])[0]
        ar += [row] * (len(nz) + 1)
        ac += list(nz) + [k + t]
        av += list(F[t, 1:][nz]) + [-M[t]]
        blo.append(-np.inf)
        bhi.append(-F[t, 0])
        row += 1
        ar += [row] * (len(nz) + 1)
        ac += list(nz) + [k + t]
        av += list(F[t, 1:][nz]) + [-(M[t] + eps)]
        blo.append(-F[t, 0] - (M[t] + eps))
        bhi.append(np.inf)
        row += 1
    ar += [row] * T
    ac += list(range(k, k + T))
    av += [1.0] * T
    blo.append(space.tau1 * T)
    bhi.append(space.tau2 * T)
    row += 1
    A = sp.csr_matrix((av, (ar, ac)), shape=(row, n))
    c = np.concatenate([np.zeros(k), cost / T])
    x_lo = np.concatenate([space.gamma2_lo, np.zeros(T)])
    x_hi = np.concatenate([space.gamma2_hi, np.ones(T)])
    prob = MioProblem(None, c, A, np.array(blo), np.array(bhi), x_lo, x_hi,
                      np.arange(k, k + T))
    x0 = None
    if warm is not None:
        g_w, d_w = warm
        x0 = np.concatenate([g_w[1:], d_w.astype(np.float64)])
    sol = branch_and_bound(prob, cfg, warm_start=x0)
    if sol.status is SolveStatus.INFEASIBLE:
        return None
    gamma = np.concatenate([[1.0], sol.x[:k]])
    d = regime_indicator(F, gamma)
    return gamma, d, float(cost[d == 1].sum() / T), sol.status is SolveStatus.OPTIMAL


# ---------------------------------------------------------------------------
# block coordinate descent
# ---------------------------------------------------------------------------

def bcd(ds: Dataset, factors, space: SearchSpace, cfg: BcdConfig | None = None,
        solver_cfg: SolverConfig | None = None,
        milp_backend: str = "auto") -> EstimationResult:
    """Block coordinate descent: time-limited MIQP, then alternating integer
    linear steps for (gamma, d) and closed-form least squares for alpha.

    The S_T trace (one entry per accepted iterate, starting at the MIQP
    warm start) is attached to the result and is non-increasing.
    """
    cfg = cfg or BcdConfig()
    base_cfg = solver_cfg or SolverConfig()
    t0 = time.monotonic()
    F = _check_factors(ds, factors)
    step1_cfg = replace(base_cfg, time_limit=cfg.max_time_1)
    res = estimate_miqp(ds, factors, space, MiqpForm.ALTERNATIVE, step1_cfg)
    trace = [res.objective]
    if res.status in (SolveStatus.OPTIMAL, SolveStatus.INFEASIBLE):
        res.trace = trace
        res.wall_time = time.monotonic() - t0
        return res
    bound1 = res.objective - res.gap * max(1.0, abs(res.objective))
    alpha = res.params.alpha
    gamma = res.params.gamma
    d = res.d
    cur = res.objective
    status = SolveStatus.TIME_LIMIT
    step_cfg = replace(base_cfg, time_limit=cfg.max_time_2)
    for _ in range(cfg.max_outer_iter):
        xb = ds.X @ alpha[:ds.d_x]
        xd = ds.X @ alpha[ds.d_x:]
        cost = xd * xd - 2.0 * (ds.y - xb) * xd
        base = float(np.sum((ds.y - xb) ** 2)) / ds.T
        out = milp_gamma_step(F, space, cost, step_cfg, warm=(gamma, d),
                              backend=milp_backend)
        if out is None:
            break
        gamma_k, d_k, lin_val, _ = out
        s_new = base + lin_val                      # S_T(alpha^{k-1}, gamma^k)
        s_old = base + float(cost[d == 1].sum()) / ds.T
        if s_new >= s_old - 1e-12 * (1 + abs(s_old)):
            break
        gamma, d = gamma_k, d_k
        alpha = _ols_for_pattern(ds, d)
        cur = ssr(ds, ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma), F)
        trace.append(cur)
    params = ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma)
    gap = max(0.0, (cur - bound1) / max(1.0, abs(cur))) if np.isfinite(bound1) else np.inf
    out_res = EstimationResult(params, cur, d, gap, status, time.monotonic() - t0)
    out_res.trace = trace
    return out_res


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def classification_error(d_hat, d_ref) -> float:
    """Mean absolute disagreement between two regime label vectors."""
    a = np.asarray(d_hat).reshape(-1)
    b = np.asarray(d_ref).reshape(-1)
    if len(a) != len(b):
        raise DimensionError(f"length mismatch: {len(a)} vs {len(b)}")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def alpha_covariance(ds: Dataset, factors, result: EstimationResult) -> Array:
    """Plug-in sandwich covariance of alpha-hat, already divided by T."""
    F = _check_factors(ds, factors)
    Z = build_design(ds.X, result.d)
    T = ds.T
    bread = Z.T @ Z / T
    sv = np.linalg.svd(bread, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise EstimationError("singular design in covariance computation")
    resid = ds.y - Z @ result.params.alpha
    meat = (Z * resid[:, None] ** 2).T @ Z / T
    binv = np.linalg.inv(bread)
    cov = binv @ meat @ binv / T
    return (cov + cov.T) / 2.0


def default_search_space(ds: Dataset, factors=None, gamma2_bound: float = 10.0,
                         tau1: float = 0.05, tau2: float = 0.95,
                         eps_strict: float = 1e-6) -> SearchSpace:
    """Search space with the alpha box set to +-(10 |OLS| + 1) per coordinate."""
    b, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
    mag = 10.0 * np.abs(b) + 1.0
    alpha_hi = np.concatenate([mag, mag])
    F = factors if factors is not None else ds.factors
    if F is None:
        raise ValueError("factors required to size the gamma2 box")
    k = np.asarray(F).shape[1] - 1
    return SearchSpace(-alpha_hi, alpha_hi, -gamma2_bound * np.ones(k),
                       gamma2_bound * np.ones(k), tau1, tau2, eps_strict)
