"""Data-generating processes, the Monte Carlo harness, and the drift function.

The DGP follows the simulation design: VAR(1) regressors and factors (100
burn-in periods), a two-regime outcome driven by g_t' phi_0 > 0, and a wide
panel Y_t = Lambda g_1t + sqrt(K) e_t with AR(1) idiosyncratic noise whose
AR coefficients are drawn once per study and held fixed across replications.
"""

from __future__ import annotations

import enum
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .model import Dataset, ParamVector, SolveStatus, build_design, regime_indicator
from .optim import SolverConfig
from .estimator import (alpha_covariance, classification_error, default_search_space,
                        estimate_exact, bcd, _ols_for_pattern)
from .inference import (BootstrapConfig, FactorMode, HypothesisSpec, WeightDist,
                        bootstrap_lr, linearity_test, BootstrapError)
from .pca import estimate_factors, rotation_matrix
from .selection import SelectionConfig, default_lambda, select_factors
from .model import EstimationResult, SearchSpace

__all__ = [
    "DgpConfig",
    "McScenario",
    "McReport",
    "DriftConfig",
    "DriftCurve",
    "finalize_study",
    "generate_dgp",
    "run_monte_carlo",
    "run_bootstrap_size_study",
    "run_linearity_study",
    "drift_function",
]

Array = NDArray[np.float64]

_Z95 = 1.959963984540054


@dataclass
class DgpConfig:
    """Two-regime factor DGP parameters.

    ``rho_g`` and ``rho_e`` default to None and are drawn once per study
    (uniform on [0.2, 0.8] and [0.3, 0.5]) by :func:`finalize_study`.
    """

    T: int = 200
    N: int = 200
    K: int = 3
    d_x: int = 2
    beta0: Array = field(default_factory=lambda: np.array([1.0, 1.0]))
    delta0: Array = field(default_factory=lambda: np.array([1.0, 1.0]))
    phi0: Array = field(default_factory=lambda: np.array([1.0, 2.0 / 3.0, 0.0, 2.0 / 3.0]))
    rho_x: float | Array = 0.5
    rho_g: Array | None = None
    rho_e: Array | None = None
    sigma_eps: float = 0.5
    loading_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=np.float64)
        self.delta0 = np.asarray(self.delta0, dtype=np.float64)
        self.phi0 = np.asarray(self.phi0, dtype=np.float64)
        if len(self.beta0) != self.d_x or len(self.delta0) != self.d_x:
            raise ValueError("beta0/delta0 must have length d_x")
        if len(self.phi0) != self.K + 1:
            raise ValueError("phi0 must have length K + 1")
        if self.phi0[0] != 1.0:
            raise ValueError("phi0[0] must equal 1 (scale normalization)")
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be positive")
        for name in ("rho_g", "rho_e"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                setattr(self, name, v)
                if np.max(np.abs(v)) >= 1.0:
                    raise ValueError(f"{name} must have spectral radius < 1")
        rx = np.atleast_1d(np.asarray(self.rho_x, dtype=np.float64))
        if np.max(np.abs(rx), initial=0.0) >= 1.0:
            raise ValueError("rho_x must have spectral radius < 1")


def finalize_study(cfg: DgpConfig) -> DgpConfig:
    """Draw the held-fixed AR diagonals once per study from the master seed."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2 ** 20,)))
    rho_g = cfg.rho_g if cfg.rho_g is not None else rng.uniform(0.2, 0.8, cfg.K)
    rho_e = cfg.rho_e if cfg.rho_e is not None else rng.uniform(0.3, 0.5, cfg.N)
    return replace(cfg, rho_g=np.asarray(rho_g, dtype=np.float64),
                   rho_e=np.asarray(rho_e, dtype=np.float64))


def _ar1(rho: Array, T: int, burn: int, innov: Array) -> Array:
    """Vectorized VAR(1) with diagonal coefficient matrix."""
    out = np.zeros((T + burn, len(rho)))
    for t in range(1, T + burn):
        out[t] = rho * out[t - 1] + innov[t]
    return out[burn:]


def generate_dgp(cfg: DgpConfig, rng: np.random.Generator):
    """Simulate one replication.

    Returns (dataset, g_true, d_true, params_true); the dataset carries both
    the observed factor matrix (g_1t, -1) and the panel.
    """
    if cfg.rho_g is None or cfg.rho_e is None:
        cfg = finalize_study(cfg)
    burn = 100
    T, N, K, d_x = cfg.T, cfg.N, cfg.K, cfg.d_x
    rho_x = np.full(d_x - 1, cfg.rho_x) if np.isscalar(cfg.rho_x) else np.asarray(cfg.rho_x)
    x2 = _ar1(rho_x, T, burn, rng.standard_normal((T + burn, d_x - 1))) if d_x > 1 \
        else np.empty((T, 0))
    g1 = _ar1(cfg.rho_g, T, burn, rng.standard_normal((T + burn, K)))
    e = _ar1(cfg.rho_e, T, burn, rng.standard_normal((T + burn, N)))
    scale = cfg.loading_scale if cfg.loading_scale is not None else float(K)
    Lam = rng.standard_normal((N, K)) * np.sqrt(scale)
    panel = g1 @ Lam.T + np.sqrt(K) * e
    X = np.column_stack([np.ones(T), x2])
    g_full = np.column_stack([g1, -np.ones(T)])
    d_true = regime_indicator(g_full, cfg.phi0)
    eps = cfg.sigma_eps * rng.standard_normal(T)
    y = X @ cfg.beta0 + (X @ cfg.delta0) * d_true + eps
    ds = Dataset(y, X, factors=g_full, panel=panel)
    params = ParamVector(cfg.beta0, cfg.delta0, cfg.phi0)
    return ds, g1, d_true, params, Lam


class McScenario(enum.Enum):
    ORACLE = "Oracle"
    OBSERVED_NO_SELECTION = "ObservedNoSelection"
    OBSERVED_SELECTION = "ObservedSelection"
    UNOBSERVED = "Unobserved"


@dataclass
class McReport:
    """Per-parameter accuracy metrics aggregated over replications."""

    scenario: str
    param_names: list[str]
    bias: Array
    rmse: Array
    coverage: Array
    accuracy_mean: float
    accuracy_sd: float
    selection_rate: float | None
    rejection_rates: dict[str, float]
    reps: int
    failures: int
    wall_time: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "params": [
                {"name": n, "bias": float(b), "rmse": float(r),
                 "coverage": None if not np.isfinite(c) else float(c)}
                for n, b, r, c in zip(self.param_names, self.bias, self.rmse, self.coverage)
            ],
            "accuracy_mean": float(self.accuracy_mean),
            "accuracy_sd": float(self.accuracy_sd),
            "selection_rate": None if self.selection_rate is None else float(self.selection_rate),
            "rejection_rates": self.rejection_rates,
            "reps": self.reps,
            "failures": self.failures,
            "wall_time": self.wall_time,
            **self.extra,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("param,bias,rmse,coverage\n")
            for n, b, r, c in zip(self.param_names, self.bias, self.rmse, self.coverage):
                cov = "" if not np.isfinite(c) else f"{c:.6f}"
                fh.write(f"{n},{b:.6f},{r:.6f},{cov}\n")


def _relabel(ds: Dataset, F: Array, res: EstimationResult) -> EstimationResult:
    """Resolve the regime-labeling ambiguity using the known sign of delta_1.

    With estimated factors the first PCA factor's sign is arbitrary, so the
    fitted regimes can be the complement of the true ones; when delta_1 < 0
    the labels are swapped and alpha is refit on the complemented design.
    """
    if res.params.delta[0] >= 0 or res.status is SolveStatus.INFEASIBLE:
        return res
    d_new = (1 - res.d).astype(np.int8)
    alpha = _ols_for_pattern(ds, d_new)
    params = ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], res.params.gamma)
    return EstimationResult(params, res.objective, d_new, res.gap, res.status,
                            res.wall_time, res.trace)


def _coverage(ds: Dataset, F: Array, res: EstimationResult, truth: Array) -> Array:
    cov = alpha_covariance(ds, F, res)
    se = np.sqrt(np.diag(cov))
    return (np.abs(res.params.alpha - truth) <= _Z95 * se).astype(np.float64)


def _mc_rep(args) -> dict:
    scenario, cfg, rep, gamma2_bound = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep,)))
    ds, g1, d_true, params, Lam = generate_dgp(cfg, rng)
    truth = np.concatenate([cfg.beta0, cfg.delta0])
    out: dict = {"failed": False, "selected": None, "gamma_err": None,
                 "gamma_ratio_err": None}
    try:
        if scenario is McScenario.ORACLE:
            alpha = _ols_for_pattern(ds, d_true)
            res = EstimationResult(
                ParamVector(alpha[:ds.d_x], alpha[ds.d_x:], cfg.phi0),
                0.0, d_true, 0.0, SolveStatus.OPTIMAL, 0.0)
            F = ds.factors
            out["alpha_err"] = res.params.alpha - truth
            out["alpha_cover"] = _coverage(ds, F, res, truth)
            out["accuracy"] = 1.0
            return out
        if scenario in (McScenario.OBSERVED_NO_SELECTION, McScenario.OBSERVED_SELECTION):
            F = ds.factors
            if scenario is McScenario.OBSERVED_NO_SELECTION:
                keep = [0] + [j for j in range(1, cfg.K) if cfg.phi0[j] != 0.0] + [cfg.K]
                F_use = F[:, keep]
                space = default_search_space(ds, F_use, gamma2_bound)
                res = estimate_exact(ds, F_use, space)
                gamma_true = cfg.phi0[keep][1:]
            else:
                space = default_search_space(ds, F, gamma2_bound)
                pilot = estimate_exact(ds, F, space)
                lam = default_lambda(ds, pilot)
                cand = list(range(cfg.K - 1))      # gamma2 coords of g_2..g_K
                sel = SelectionConfig(lam, 0, len(cand), cand)
                active, res = select_factors(ds, F, space, sel)
                true_active = sorted({j for j in cand if cfg.phi0[j + 1] != 0.0}
                                     | {cfg.K - 1})
                out["selected"] = (sorted(active) == true_active)
                F_use = F
                gamma_true = cfg.phi0[1:]
            d_hat = res.d
            out["alpha_err"] = res.params.alpha - truth
            out["alpha_cover"] = _coverage(ds, F_use, res, truth)
            out["accuracy"] = 1.0 - classification_error(d_hat, d_true)
            out["gamma_err"] = res.params.gamma[1:] - gamma_true
            return out
        # UNOBSERVED: PCA factors, estimate, undo labeling, rotation-adjust truth
        fe = estimate_factors(ds.panel, cfg.K)
        F_use = fe.F_full
        space = default_search_space(ds, F_use, gamma2_bound)
        res = estimate_exact(ds, F_use, space)
        res = _relabel(ds, F_use, res)
        out["alpha_err"] = res.params.alpha - truth
        out["alpha_cover"] = _coverage(ds, F_use, res, truth)
        acc = 1.0 - classification_error(res.d, d_true)
        out["accuracy"] = max(acc, 1.0 - acc) if res.params.delta[0] < 0 else acc
        H = rotation_matrix(fe, g1, Lam).H
        gamma0 = np.linalg.solve(H, cfg.phi0)
        if abs(gamma0[0]) > 1e-12:
            gnorm = gamma0 / gamma0[0]
            if gamma0[0] > 0:
                out["gamma_err"] = res.params.gamma[1:] - gnorm[1:]
        if cfg.K == 1:
            # rotation-consistent scalar target: gamma_2 estimates h11 * phi2 / phi1
            h11 = H[0, 0]
            out["gamma_ratio_err"] = res.params.gamma[1] - h11 * cfg.phi0[1] / cfg.phi0[0]
        return out
    except Exception as exc:  # failed replications are logged, excluded, counted
        out["failed"] = True
        out["error"] = repr(exc)
        return out


def run_monte_carlo(scenario: McScenario, cfg: DgpConfig, reps: int,
                    solver_cfg: SolverConfig | None = None, threads: int = 1,
                    gamma2_bound: float = 10.0) -> McReport:
    """Replicate the DGP, estimate per scenario, and aggregate the metrics."""
    t0 = time.monotonic()
    cfg = finalize_study(cfg)
    jobs = [(scenario, cfg, rep, gamma2_bound) for rep in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_mc_rep, jobs, chunksize=max(1, reps // (8 * threads))))
    else:
        results = [_mc_rep(j) for j in jobs]
    ok = [r for r in results if not r["failed"]]
    failures = len(results) - len(ok)
    for r in results:
        if r["failed"]:
            warnings.warn(f"replication failed: {r.get('error')}")
    if not ok:
        raise RuntimeError("every Monte Carlo replication failed")
    d_x = cfg.d_x
    names = [f"beta_{i+1}" for i in range(d_x)] + [f"delta_{i+1}" for i in range(d_x)]
    errs = np.array([r["alpha_err"] for r in ok])
    covers = np.array([r["alpha_cover"] for r in ok])
    bias = errs.mean(axis=0)
    rmse = np.sqrt((errs ** 2).mean(axis=0))
    coverage = covers.mean(axis=0)
    g_errs = [r["gamma_err"] for r in ok if r["gamma_err"] is not None]
    if g_errs and all(len(g) == len(g_errs[0]) for g in g_errs):
        g = np.array(g_errs)
        names += [f"gamma_{j+2}" for j in range(g.shape[1])]
        bias = np.concatenate([bias, g.mean(axis=0)])
        rmse = np.concatenate([rmse, np.sqrt((g ** 2).mean(axis=0))])
        coverage = np.concatenate([coverage, np.full(g.shape[1], np.nan)])
    extra = {}
    ratio = [r["gamma_ratio_err"] for r in ok if r["gamma_ratio_err"] is not None]
    if ratio:
        ratio = np.asarray(ratio)
        extra["gamma_ratio_bias"] = float(ratio.mean())
        extra["gamma_ratio_rmse"] = float(np.sqrt((ratio ** 2).mean()))
    acc = np.array([r["accuracy"] for r in ok])
    selected = [r["selected"] for r in ok if r["selected"] is not None]
    return McReport(scenario.value, names, bias, rmse, coverage,
                    float(acc.mean()), float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                    float(np.mean(selected)) if selected else None,
                    {}, reps, failures, time.monotonic() - t0, extra)


# ---------------------------------------------------------------------------
# bootstrap size and linearity power studies
# ---------------------------------------------------------------------------

def _boot_rep(args) -> dict:
    mode, cfg, rep, boot, gamma2_bound = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep,)))
    ds, g1, d_true, params, Lam = generate_dgp(cfg, rng)
    out = {"failed": False}
    try:
        h = HypothesisSpec(np.eye(1, cfg.K + 1, cfg.K), [0.0], "last coefficient zero")
        boot_rep = replace(boot, seed=int(np.random.SeedSequence(
            cfg.seed, spawn_key=(rep, 1)).generate_state(1)[0]), factor_mode=mode)
        if mode is FactorMode.KNOWN:
            factors = ds.factors
            space = default_search_space(ds, factors, gamma2_bound)
        else:
            fe = estimate_factors(ds.panel, cfg.K)
            factors = fe
            space = default_search_space(ds, fe.F_full, gamma2_bound)
        cv, p, _ = bootstrap_lr(ds, factors, space, h, boot_rep)
        out["p"] = p
    except Exception as exc:
        out["failed"] = True
        out["error"] = repr(exc)
    return out


def run_bootstrap_size_study(mode: FactorMode, cfg: DgpConfig, reps: int,
                             boot: BootstrapConfig, threads: int = 1,
                             gamma2_bound: float = 10.0) -> McReport:
    """Monte Carlo rejection rates of the bootstrap LR test of a true null."""
    t0 = time.monotonic()
    cfg = finalize_study(cfg)
    jobs = [(mode, cfg, rep, boot, gamma2_bound) for rep in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_boot_rep, jobs, chunksize=1))
    else:
        results = [_boot_rep(j) for j in jobs]
    ok = [r for r in results if not r["failed"]]
    failures = len(results) - len(ok)
    if not ok:
        raise RuntimeError("every bootstrap replication failed: "
                           + str(results[0].get("error")))
    ps = np.array([r["p"] for r in ok])
    rates = {"0.05": float(np.mean(ps <= 0.05)), "0.01": float(np.mean(ps <= 0.01))}
    return McReport(f"Bootstrap-{mode.value}", [], np.empty(0), np.empty(0),
                    np.empty(0), np.nan, np.nan, None, rates, reps, failures,
                    time.monotonic() - t0)


def _lin_rep(args) -> dict:
    cfg, rep, B, gamma2_bound = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep,)))
    ds, *_ = generate_dgp(cfg, rng)
    out = {"failed": False}
    try:
        space = default_search_space(ds, ds.factors, gamma2_bound)
        child = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep, 7)))
        out["p"] = linearity_test(ds, ds.factors, space, B, child)
    except Exception as exc:
        out["failed"] = True
        out["error"] = repr(exc)
    return out


def run_linearity_study(cfg: DgpConfig, reps: int, B: int, threads: int = 1,
                        gamma2_bound: float = 10.0) -> McReport:
    """Rejection rate of the sup-Q bootstrap linearity test at the 5% level."""
    t0 = time.monotonic()
    cfg = finalize_study(cfg)
    jobs = [(cfg, rep, B, gamma2_bound) for rep in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_lin_rep, jobs, chunksize=1))
    else:
        results = [_lin_rep(j) for j in jobs]
    ok = [r for r in results if not r["failed"]]
    failures = len(results) - len(ok)
    if not ok:
        raise RuntimeError("every linearity replication failed: "
                           + str(results[0].get("error")))
    ps = np.array([r["p"] for r in ok])
    rates = {"0.05": float(np.mean(ps <= 0.05)), "0.10": float(np.mean(ps <= 0.10))}
    return McReport("Linearity", [], np.empty(0), np.empty(0), np.empty(0),
                    np.nan, np.nan, None, rates, reps, failures,
                    time.monotonic() - t0)


# ---------------------------------------------------------------------------
# drift function
# ---------------------------------------------------------------------------

@dataclass
class DriftConfig:
    """Evaluation grid for the limit drift function in the scalar case."""

    omega: float
    g_grid: Array
    mc_draws: int = 200_000
    sigma_h: float = 1.0
    density_q: str = "std-normal"
    seed: int = 0

    def __post_init__(self):
        self.g_grid = np.asarray(self.g_grid, dtype=np.float64)
        if self.omega < 0:
            raise ValueError("omega must lie in [0, inf]")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be at least 1")
        if self.sigma_h <= 0:
            raise ValueError("sigma_h must be positive")
        if self.density_q not in ("std-normal", "uniform"):
            raise ValueError("density_q must be 'std-normal' or 'uniform'")

    @property
    def p_u0(self) -> float:
        """Density of the threshold index at zero under the q model."""
        if self.density_q == "std-normal":
            return 1.0 / np.sqrt(2.0 * np.pi)
        return 0.5  # uniform on [-1, 1]


@dataclass
class DriftCurve:
    omega: float
    g: Array
    A: Array
    mc_se: Array

    def to_rows(self):
        for g, a, s in zip(self.g, self.A, self.mc_se):
            yield {"omega": self.omega, "g": float(g), "A": float(a), "mc_se": float(s)}


def drift_function(cfg: DriftConfig) -> DriftCurve:
    """Evaluate the drift A(omega, g) over the grid in the simple scalar case
    (unit regressor, unit jump, threshold noise independent of the index).

    omega = 0 uses the analytic quadratic form; omega = inf is the exact kink
    |g| * p_u(0); interior omega runs a Monte Carlo average over the Gaussian
    threshold noise with the scale factors max(1, omega^{-1/3}) and
    max(omega, omega^{1/3}).
    """
    g = cfg.g_grid
    p0 = cfg.p_u0
    if cfg.omega == 0.0:
        phi0 = 1.0 / (np.sqrt(2.0 * np.pi) * cfg.sigma_h)
        return DriftCurve(0.0, g, (g ** 2) * phi0 * p0, np.zeros_like(g))
    if np.isinf(cfg.omega):
        return DriftCurve(np.inf, g, np.abs(g) * p0, np.zeros_like(g))
    zeta = max(cfg.omega, cfg.omega ** (1.0 / 3.0))
    m_om = max(1.0, cfg.omega ** (-1.0 / 3.0))
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(cfg.mc_draws) * cfg.sigma_h / zeta
    az = np.abs(z)
    vals = np.empty_like(g)
    ses = np.empty_like(g)
    for i, gi in enumerate(g):
        term = np.abs(gi + z) - az
        vals[i] = m_om * term.mean() * p0
        ses[i] = m_om * term.std(ddof=1) / np.sqrt(cfg.mc_draws) * p0
    return DriftCurve(cfg.omega, g, vals, ses)
