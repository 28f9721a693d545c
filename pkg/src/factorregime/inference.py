"""Bootstrap inference on the threshold index and the linearity test.

The quasi-likelihood-ratio statistic compares restricted and unrestricted
least-squares fits; its critical values come from a k-step wild bootstrap
that regenerates the panel factors (PCA re-estimation or Gaussian
perturbation) to reproduce the first-stage estimation error, then alternates
closed-form alpha updates with exact integer gamma steps starting from the
sample estimates. The sup-Q statistic tests the linear null delta = 0 with
bootstrap p-values.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .model import (Dataset, DimensionError, EstimationResult, ParamVector,
                    SearchSpace, SolveStatus, build_design, regime_indicator, ssr)
from .optim import SolverConfig, scan_cells
from .estimator import (EstimationError, _check_factors, _ols_for_pattern,
                        estimate_exact, bcd, make_ssr_value)
from .pca import (FactorEstimate, estimate_factors, matrix_sqrt_psd,
                  rotation_matrix, threshold_covariance)

__all__ = [
    "WeightDist",
    "FactorMode",
    "HypothesisSpec",
    "BootstrapConfig",
    "BootstrapError",
    "wild_weights",
    "lr_statistic",
    "sigma_h_hat",
    "regenerate_factors_pca",
    "perturb_factors_gaussian",
    "bootstrap_lr",
    "sup_q",
    "linearity_test",
]

Array = NDArray[np.float64]


class BootstrapError(RuntimeError):
    """Bootstrap failed (too many replication-level failures or bad input)."""


class FactorRegenError(RuntimeError):
    """A bootstrap factor regeneration produced a singular rotation."""


class WeightDist(enum.Enum):
    RADEMACHER = "Rademacher"
    STD_NORMAL = "StdNormal"


class FactorMode(enum.Enum):
    KNOWN = "Known"
    PCA_REESTIMATE = "PcaReestimate"
    GAUSSIAN_PERTURB = "GaussianPerturb"


@dataclass(frozen=True)
class HypothesisSpec:
    """Linear restriction R gamma = r on the threshold coefficients."""

    R: Array
    r: Array
    label: str = ""

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)
        if R.shape[0] != len(r):
            raise DimensionError("R and r sizes do not match")
        if np.linalg.matrix_rank(R) < R.shape[0]:
            raise ValueError("restriction matrix R must have full row rank")
        # consistency with the scale normalization gamma_1 = 1
        A = np.vstack([np.eye(1, R.shape[1]), R])
        b = np.concatenate([[1.0], r])
        sol, res, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.max(np.abs(A @ sol - b)) > 1e-8:
            raise ValueError("restriction is inconsistent with gamma_1 = 1")

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def fixed_coords(self, values: Array | None = None) -> dict[int, float] | None:
        """Map gamma indices to fixed values when every row pins one coordinate."""
        vals = self.r if values is None else np.asarray(values, dtype=np.float64)
        out: dict[int, float] = {}
        for i, row in enumerate(self.R):
            nz = np.nonzero(np.abs(row) > 1e-12)[0]
            if len(nz) != 1 or nz[0] == 0:
                return None
            j = int(nz[0])
            if j in out:
                return None
            out[j] = float(vals[i] / row[j])
        return out


@dataclass
class BootstrapConfig:
    """Replication count, inner iterations, weights, and factor handling."""

    B: int = 199
    k: int = 2
    weight_dist: WeightDist = WeightDist.RADEMACHER
    factor_mode: FactorMode = FactorMode.KNOWN
    seed: int = 0
    level: float = 0.05

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must lie in (0, 1)")


def wild_weights(T: int, dist: WeightDist, rng: np.random.Generator) -> Array:
    """iid mean-zero unit-variance multipliers."""
    if T < 1:
        raise ValueError("T must be positive")
    if dist is WeightDist.RADEMACHER:
        return rng.integers(0, 2, size=T).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(T)


# ---------------------------------------------------------------------------
# restricted estimation
# ---------------------------------------------------------------------------

def _reduced_factors(F: Array, fixed: dict[int, float]):
    """Absorb fixed gamma coordinates into the unit-coefficient column."""
    d_f = F.shape[1]
    free = [j for j in range(1, d_f) if j not in fixed]
    f1 = F[:, 0].copy()
    for j, v in fixed.items():
        f1 = f1 + F[:, j] * v
    return np.column_stack([f1] + [F[:, j] for j in free]), free


def _restricted_space(space: SearchSpace, fixed: dict[int, float],
                      free: list[int]) -> SearchSpace:
    for j, v in fixed.items():
        if not (space.gamma2_lo[j - 1] - 1e-9 <= v <= space.gamma2_hi[j - 1] + 1e-9):
            raise EstimationError(f"restriction value for gamma[{j}] leaves the box")
    keep = np.asarray([j - 1 for j in free], dtype=np.intp)
    return space.restrict_gamma2(keep)


def estimate_restricted(ds: Dataset, factors, space: SearchSpace,
                        h: HypothesisSpec, values: Array | None = None
                        ) -> EstimationResult:
    """Least squares subject to R gamma = values (defaults to h.r).

    Coordinate restrictions reduce to an exact scan over the free
    coordinates; general linear restrictions are not supported by the exact
    backend and raise.
    """
    F = np.asarray(factors, dtype=np.float64)
    fixed = h.fixed_coords(values)
    if fixed is None:
        raise EstimationError("only coordinate restrictions are supported exactly; "
                              "encode general R via the MIQP backend")
    Fr, free = _reduced_factors(F, fixed)
    sub = _restricted_space(space, fixed, free)
    mom, value = make_ssr_value(ds.X, ds.y)
    res = scan_cells(Fr, sub, mom, value)
    if res is None:
        raise EstimationError("restricted problem infeasible under the tau window")
    gamma = np.zeros(F.shape[1])
    gamma[0] = 1.0
    for j, v in fixed.items():
        gamma[j] = v
    for i, j in enumerate(free):
        gamma[j] = res.gamma2[i]
    alpha = _ols_for_pattern(ds, res.d)
    params = ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], gamma)
    obj = ssr(ds, params, F)
    return EstimationResult(params, obj, res.d, 0.0, SolveStatus.OPTIMAL, 0.0)


def _estimate_auto(ds: Dataset, F: Array, space: SearchSpace,
                   solver_cfg: SolverConfig | None) -> EstimationResult:
    if F.shape[1] - 1 <= 3:
        return estimate_exact(ds, F, space)
    return bcd(ds, F, space, solver_cfg=solver_cfg)


def lr_statistic(ds: Dataset, factors, space: SearchSpace, h: HypothesisSpec,
                 theta=None, solver_cfg: SolverConfig | None = None,
                 unrestricted: EstimationResult | None = None) -> float:
    """Quasi-likelihood ratio (S_restricted - S_unrestricted) / S_unrestricted."""
    F = _check_factors(ds, factors)
    if unrestricted is None:
        unrestricted = _estimate_auto(ds, F, space, solver_cfg)
    theta = h.r if theta is None else np.asarray(theta, dtype=np.float64).reshape(-1)
    restricted = estimate_restricted(ds, F, space, h, theta)
    su = unrestricted.objective
    if su <= 0:
        warnings.warn("perfect unrestricted fit; LR undefined, returning inf")
        return np.inf
    lr = (restricted.objective - su) / su
    if lr < -1e-9:
        raise EstimationError(f"negative LR {lr:.3e}: restricted fit beat unrestricted")
    return max(lr, 0.0)


# ---------------------------------------------------------------------------
# bootstrap factor regeneration
# ---------------------------------------------------------------------------

def sigma_h_hat(fe: FactorEstimate, Sigma_e: Array) -> Array:
    """Asymptotic variance N (L'L)^{-1} L' var(e) L (L'L)^{-1} of the factor noise."""
    LtL = fe.Lambda.T @ fe.Lambda
    G = np.linalg.solve(LtL, fe.Lambda.T)
    S = fe.N * G @ Sigma_e @ G.T
    return (S + S.T) / 2.0


def regenerate_factors_pca(fe: FactorEstimate, Sigma_e: Array,
                           rng: np.random.Generator) -> Array:
    """Bootstrap factors: simulate the panel, re-run PCA, undo the new rotation.

    The regenerated panel treats the estimated factors and loadings as truth,
    adds correlated Gaussian idiosyncratic noise with covariance Sigma_e,
    re-estimates factors, and rotates them back with the known bootstrap
    rotation so the draw mimics the sampling error of the original factors.
    """
    Re = matrix_sqrt_psd(Sigma_e)
    W = rng.standard_normal((fe.T, fe.N))
    Y_star = fe.F1 @ fe.Lambda.T + W @ Re
    fe_star = estimate_factors(Y_star, fe.K)
    try:
        H = rotation_matrix(fe_star, fe.F1, lambda_true=fe.Lambda).H
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FactorRegenError(str(exc)) from exc
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e12:
        raise FactorRegenError(f"near-singular bootstrap rotation (cond {cond:.2e})")
    return np.linalg.solve(H.T, fe_star.F_full.T).T


def perturb_factors_gaussian(fe: FactorEstimate, Sigma_h: Array, N: int,
                             rng: np.random.Generator) -> Array:
    """Bootstrap factors: add N(0, Sigma_h / N) noise to the factor block only."""
    Rh = matrix_sqrt_psd(Sigma_h)
    out = fe.F_full.copy()
    out[:, :fe.K] += rng.standard_normal((fe.T, fe.K)) @ Rh.T / np.sqrt(N)
    return out


# ---------------------------------------------------------------------------
# k-step bootstrap
# ---------------------------------------------------------------------------

def _alpha_step(X: Array, y_star: Array, d: NDArray[np.int8]) -> Array:
    Z = build_design(X, d)
    G = Z.T @ Z
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        return np.linalg.pinv(Z) @ y_star
    return np.linalg.solve(G, Z.T @ y_star)


def _gamma_step(F: Array, space: SearchSpace, X: Array, y_star: Array,
                alpha: Array, fixed: dict[int, float] | None):
    """argmin over gamma of the bootstrap loss given alpha (exact cell scan)."""
    d_x = X.shape[1]
    xb = X @ alpha[:d_x]
    xd = X @ alpha[d_x:]
    cost = xd * xd - 2.0 * (y_star - xb) * xd
    if fixed:
        Fr, free = _reduced_factors(F, fixed)
        sub = _restricted_space(space, fixed, free)
    else:
        Fr, free = F, list(range(1, F.shape[1]))
        sub = space
    if Fr.shape[1] - 1 == 0:
        d = (Fr[:, 0] > 0).astype(np.int8)
        kmin, kmax = space.count_window(len(y_star))
        if not (kmin <= int(d.sum()) <= kmax):
            raise EstimationError("restricted bootstrap pattern violates tau window")
        gamma2_free = np.empty(0)
    else:
        res = scan_cells(Fr, sub, cost[:, None], lambda M1, cnt: M1[:, 0])
        if res is None:
            raise EstimationError("bootstrap gamma step infeasible")
        d = res.d
        gamma2_free = res.gamma2
    gamma = np.zeros(F.shape[1])
    gamma[0] = 1.0
    if fixed:
        for j, v in fixed.items():
            gamma[j] = v
    for i, j in enumerate(free):
        gamma[j] = gamma2_free[i]
    return gamma, d


def _kstep_loss(X: Array, y_star: Array, alpha: Array, d: NDArray[np.int8]) -> float:
    resid = y_star - X @ alpha[:X.shape[1]] - (X @ alpha[X.shape[1]:]) * d
    return float(resid @ resid / len(y_star))


def _kstep_chain(F_star: Array, space: SearchSpace, X: Array, y_star: Array,
                 gamma0: Array, k: int, fixed: dict[int, float] | None):
    """k alternations of the closed-form alpha step and the integer gamma step."""
    gamma = gamma0
    d = regime_indicator(F_star, gamma)
    losses = []
    for _ in range(k):
        alpha = _alpha_step(X, y_star, d)
        gamma, d = _gamma_step(F_star, space, X, y_star, alpha, fixed)
        losses.append(_kstep_loss(X, y_star, alpha, d))
    return alpha, gamma, d, losses


def bootstrap_lr(ds: Dataset, factors, space: SearchSpace, h: HypothesisSpec,
                 cfg: BootstrapConfig, solver_cfg: SolverConfig | None = None,
                 c_thresh: float = 0.5) -> tuple[float, float, Array]:
    """k-step wild bootstrap of the LR statistic.

    Returns (critical value at cfg.level, p-value, LR* draws). ``factors``
    is a plain matrix for FactorMode.KNOWN and a FactorEstimate for the
    regenerated-factor modes. Replication failures are tolerated up to 5%.
    """
    if isinstance(factors, FactorEstimate):
        fe = factors
        F_tilde = fe.F_full
    else:
        fe = None
        F_tilde = _check_factors(ds, factors)
    if cfg.factor_mode is not FactorMode.KNOWN and fe is None:
        raise ValueError("regenerated-factor modes need a FactorEstimate input")

    unres = _estimate_auto(ds, F_tilde, space, solver_cfg)
    res_h = estimate_restricted(ds, F_tilde, space, h)
    lr_obs = lr_statistic(ds, F_tilde, space, h, unrestricted=unres)

    gamma_hat = unres.params.gamma
    alpha_hat = unres.params.alpha
    gamma_h_hat = res_h.params.gamma
    Zt = build_design(ds.X, unres.d)
    fitted = Zt @ alpha_hat
    eps_hat = ds.y - fitted
    fixed_boot = h.fixed_coords(h.R @ gamma_hat)
    if fixed_boot is None:
        raise EstimationError("only coordinate restrictions are supported")

    Sigma_e = Rh = None
    if cfg.factor_mode is FactorMode.PCA_REESTIMATE:
        Sigma_e = threshold_covariance(fe.E, c_thresh)
    elif cfg.factor_mode is FactorMode.GAUSSIAN_PERTURB:
        Sigma_e = threshold_covariance(fe.E, c_thresh)
        Rh = sigma_h_hat(fe, Sigma_e)

    draws = []
    failures = 0
    for b in range(cfg.B):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(b,)))
        try:
            eta = wild_weights(ds.T, cfg.weight_dist, rng)
            if cfg.factor_mode is FactorMode.KNOWN:
                F_star = F_tilde
            elif cfg.factor_mode is FactorMode.PCA_REESTIMATE:
                F_star = regenerate_factors_pca(fe, Sigma_e, rng)
            else:
                F_star = perturb_factors_gaussian(fe, Rh, fe.N, rng)
            y_star = fitted + eta * eps_hat
            a_u, g_u, d_u, _ = _kstep_chain(F_star, space, ds.X, y_star,
                                            gamma_hat, cfg.k, None)
            a_r, g_r, d_r, _ = _kstep_chain(F_star, space, ds.X, y_star,
                                            gamma_h_hat, cfg.k, fixed_boot)
            s_u = _kstep_loss(ds.X, y_star, a_u, d_u)
            s_r = _kstep_loss(ds.X, y_star, a_r, d_r)
            if s_u <= 0:
                raise EstimationError("degenerate bootstrap fit")
            lr_b = (s_r - s_u) / s_u
            if lr_b < -1e-9:
                raise EstimationError(f"negative bootstrap LR {lr_b:.3e}")
            draws.append(max(lr_b, 0.0))
        except (EstimationError, FactorRegenError, np.linalg.LinAlgError):
            failures += 1
    if failures > 0.05 * cfg.B:
        raise BootstrapError(f"{failures}/{cfg.B} bootstrap replications failed")
    if failures:
        warnings.warn(f"{failures} bootstrap replications failed and were dropped")
    draws = np.asarray(draws)
    n_eff = len(draws)
    m = int(np.ceil((1.0 - cfg.level) * (n_eff + 1)))
    s = np.sort(draws)
    cv = float(s[min(m, n_eff) - 1]) if n_eff else np.inf
    p = (1.0 + float(np.sum(draws >= lr_obs))) / (n_eff + 1.0)
    return cv, p, draws


# ---------------------------------------------------------------------------
# sup-Q linearity test
# ---------------------------------------------------------------------------

class _SupQEngine:
    """Caches the achievable patterns so repeated y-only evaluations are cheap."""

    def __init__(self, ds: Dataset, F: Array, space: SearchSpace,
                 gamma_candidates=None):
        self.X = ds.X
        self.T = ds.T
        if gamma_candidates is None:
            k = F.shape[1] - 1
            if k > 3:
                raise ValueError("supply gamma_candidates when d_f - 1 > 3")
            pats = _all_patterns(F, space)
        else:
            G = np.atleast_2d(np.asarray(gamma_candidates, dtype=np.float64))
            pats = (G @ F.T > 0.0)
        cnt = pats.sum(axis=1)
        kmin, kmax = space.count_window(self.T)
        pats = pats[(cnt >= kmin) & (cnt <= kmax)]
        if not len(pats):
            raise EstimationError("no tau-feasible candidate regimes")
        self.D = np.unique(np.asarray(pats, dtype=np.float64), axis=0)

    def supq(self, y: Array) -> float:
        mom, value = make_ssr_value(self.X, y)
        M1 = self.D @ mom
        vals = value(M1, self.D.sum(axis=1))
        s_min = float(np.min(vals))
        xb, *_ = np.linalg.lstsq(self.X, y, rcond=None)
        r0 = y - self.X @ xb
        s0 = float(r0 @ r0 / self.T)
        if s_min <= 1e-14 * max(1.0, s0):
            warnings.warn("perfect threshold fit; supQ is infinite")
            return np.inf
        return self.T * (s0 - s_min) / s_min


def _all_patterns(F: Array, space: SearchSpace) -> NDArray[np.bool_]:
    from .optim.cells import _split, _witness_points
    f1, F2 = _split(F)
    if F2.shape[1] == 0:
        return (f1 > 0.0)[None, :]
    W = _witness_points(f1, F2, space.gamma2_lo, space.gamma2_hi)
    return (W @ F2.T + f1) > 0.0


def sup_q(ds: Dataset, factors, space: SearchSpace, gamma_candidates=None) -> float:
    """Largest normalized SSR improvement of the threshold fit over the linear fit.

    The delta = 0 fit is gamma-free and computed once; the supremum over
    gamma reduces to the best tau-feasible cell (exact when candidates are
    enumerated, a user grid otherwise).
    """
    F = _check_factors(ds, factors)
    return _SupQEngine(ds, F, space, gamma_candidates).supq(ds.y)


def linearity_test(ds: Dataset, factors, space: SearchSpace, B: int,
                   rng: np.random.Generator | int | None = None,
                   weight_dist: WeightDist = WeightDist.RADEMACHER,
                   solver_cfg: SolverConfig | None = None) -> float:
    """Wild-bootstrap p-value for the null of no threshold effect.

    The bootstrap outcome is linear, x_t' beta-hat plus reweighted residuals
    from the unrestricted threshold fit, with the same (observed or
    estimated) factors reused in every replication.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if isinstance(factors, FactorEstimate):
        factors = factors.F_full
    F = _check_factors(ds, factors)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    unres = _estimate_auto(ds, F, space, solver_cfg)
    beta_hat = unres.params.beta
    eps_hat = ds.y - build_design(ds.X, unres.d) @ unres.params.alpha
    engine = _SupQEngine(ds, F, space)
    obs = engine.supq(ds.y)
    base = ds.X @ beta_hat
    count = 0
    for child in rng.spawn(B):
        eta = wild_weights(ds.T, weight_dist, child)
        if engine.supq(base + eta * eps_hat) >= obs:
            count += 1
    return (1.0 + count) / (B + 1.0)
