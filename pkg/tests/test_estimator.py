"""Estimation programs: MIQP forms, exact backend, BCD, and metrics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorregime.model import (Dataset, ParamVector, SearchSpace, SolveStatus,
                                build_design, regime_indicator, ssr)
from factorregime.optim import SolverConfig
from factorregime.estimator import (BcdConfig, DegenerateDesignWarning, MiqpForm,
                                    MiqpLayout, alpha_covariance, bcd, build_miqp,
                                    classification_error, compute_Mt,
                                    default_search_space, estimate_exact,
                                    estimate_miqp, milp_gamma_step, ols_given_gamma)

from conftest import make_instance

FAST_CFG = SolverConfig(time_limit=1.0, gap_tol=1e-8)


class TestBigM:
    def test_hand_maximization(self):
        space = SearchSpace([-1, -1], [1, 1], [-3.0], [3.0])
        assert compute_Mt(np.array([2.0, -1.0]), space) == pytest.approx(5.0)

    def test_unit_cases(self):
        space = SearchSpace([-1, -1], [1, 1], [-1.0], [1.0])
        assert compute_Mt(np.array([0.0, -1.0]), space) == pytest.approx(1.0)
        degenerate = SearchSpace([-1, -1], [1, 1], [0.0], [0.0])
        assert compute_Mt(np.array([3.5, -1.0]), degenerate) == pytest.approx(3.5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_dominates_any_box_point(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 4))
        f = rng.standard_normal(k + 1)
        lo = -rng.random(k) * 4
        hi = rng.random(k) * 4
        space = SearchSpace([-1, -1], [1, 1], lo, hi)
        M = compute_Mt(f, space)
        for _ in range(50):
            g2 = lo + (hi - lo) * rng.random(k)
            assert abs(f[0] + f[1:] @ g2) <= M + 1e-10


class TestBuildMiqp:
    def test_variable_count_basic(self):
        rng = np.random.default_rng(0)
        ds, F, space = make_instance(rng, T=3, d_x=1, d_f=2)
        p = build_miqp(ds, F, space, MiqpForm.BASIC)
        assert p.n == 1 + 1 + 1 + 3 + 3

    def test_delta_pinned_at_zero_reduces_to_ols(self, rng):
        ds, F, _ = make_instance(rng, T=25, d_x=2, d_f=2)
        tiny = 1e-9
        space = SearchSpace([-10, -10, -tiny, -tiny], [10, 10, tiny, tiny],
                            [-8.0], [8.0])
        res = estimate_miqp(ds, F, space, MiqpForm.BASIC, FAST_CFG)
        beta, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
        ols_ssr = float(np.mean((ds.y - ds.X @ beta) ** 2))
        assert res.objective == pytest.approx(ols_ssr, abs=1e-6)

    def test_packed_solution_feasible(self, rng):
        ds, F, space = make_instance(rng, T=15, d_x=2, d_f=3)
        for form in MiqpForm:
            p = build_miqp(ds, F, space, form)
            lay = MiqpLayout(ds.d_x, 2, ds.T, form)
            gamma = np.array([1.0, 0.3, -0.2])
            d = regime_indicator(F, gamma).astype(float)
            if not (space.count_window(ds.T)[0] <= d.sum() <= space.count_window(ds.T)[1]):
                continue
            x = lay.pack(np.array([0.5, -0.5]), np.array([0.25, 0.75]), gamma[1:], d, space)
            assert p.max_violation(x) <= 1e-9
            expect = ssr(ds, ParamVector([0.5, -0.5], [0.25, 0.75], gamma), F)
            assert p.objective_value(x) == pytest.approx(expect, abs=1e-10)


class TestExactBackend:
    def test_noiseless_recovery(self, rng):
        ds, F, space = make_instance(rng, T=40, d_x=2, d_f=2, noise=0.0)
        res = estimate_exact(ds, F, space)
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(0.0, abs=1e-18)

    def test_infeasible_tau_window(self, rng):
        # all index values positive: only the all-ones pattern is achievable
        T = 10
        F = np.column_stack([np.full(T, 5.0), -np.ones(T)])
        X = np.column_stack([np.ones(T), rng.standard_normal(T)])
        ds = Dataset(rng.standard_normal(T), X, factors=F)
        space = SearchSpace(-5 * np.ones(4), 5 * np.ones(4), [-1.0], [1.0], 0.2, 0.8)
        res = estimate_exact(ds, F, space)
        assert res.status is SolveStatus.INFEASIBLE

    def test_invariant_d_matches_gamma(self, rng):
        for _ in range(10):
            ds, F, space = make_instance(rng, T=30, d_x=1, d_f=3)
            res = estimate_exact(ds, F, space)
            assert np.array_equal(res.d, regime_indicator(F, res.params.gamma))

    def test_exhaustive_bruteforce_oracle_small(self, rng):
        # against a dumb quantile-threshold sweep when d_f = 2: every distinct
        # pattern of 1{f1 > c} for c between consecutive order stats
        for _ in range(20):
            ds, F, space = make_instance(rng, T=16, d_x=1, d_f=2)
            res = estimate_exact(ds, F, space)
            f1 = F[:, 0]
            kmin, kmax = space.count_window(ds.T)
            best = np.inf
            cuts = np.concatenate([[-np.inf], np.sort(f1), [np.inf]])
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                c = 0.0 if np.isinf(lo) and np.isinf(hi) else \
                    (lo + 1.0 if np.isinf(hi) else (hi - 1.0 if np.isinf(lo) else (lo + hi) / 2))
                if not (-8.0 <= c <= 8.0):
                    c = np.clip(c, -8.0, 8.0)
                d = (f1 > c).astype(float)
                if not (kmin <= d.sum() <= kmax):
                    continue
                Z = build_design(ds.X, d)
                coef, *_ = np.linalg.lstsq(Z, ds.y, rcond=None)
                best = min(best, float(np.mean((ds.y - Z @ coef) ** 2)))
            assert res.objective == pytest.approx(best, abs=1e-10)


class TestTheorem1Equivalence:
    def test_miqp_equals_enumeration(self, rng):
        for i in range(8):
            ds, F, space = make_instance(rng, T=20, d_x=int(rng.integers(1, 3)), d_f=2)
            ex = estimate_exact(ds, F, space)
            mi = estimate_miqp(ds, F, space, MiqpForm.BASIC, FAST_CFG)
            assert abs(ex.objective - mi.objective) <= 1e-8
            assert np.array_equal(ex.d, mi.d)

    def test_forms_agree(self, rng):
        for i in range(6):
            ds, F, space = make_instance(rng, T=20, d_x=2, d_f=2)
            a = estimate_miqp(ds, F, space, MiqpForm.BASIC, FAST_CFG)
            b = estimate_miqp(ds, F, space, MiqpForm.ALTERNATIVE, FAST_CFG)
            assert abs(a.objective - b.objective) <= 1e-8

    def test_returned_solution_satisfies_constraints(self, rng):
        for form in MiqpForm:
            ds, F, space = make_instance(rng, T=18, d_x=2, d_f=2)
            res = estimate_miqp(ds, F, space, form, FAST_CFG)
            p = build_miqp(ds, F, space, form)
            lay = MiqpLayout(ds.d_x, 1, ds.T, form)
            x = lay.pack(res.params.beta, res.params.delta, res.params.gamma[1:],
                         res.d.astype(float), space)
            assert p.max_violation(x) <= 1e-6


class TestOlsGivenGamma:
    def test_degenerate_all_zero(self, rng):
        ds, F, _ = make_instance(rng, T=20, d_x=2, d_f=2)
        gamma = np.array([1.0, 100.0])   # index always negative within data
        with pytest.warns(DegenerateDesignWarning):
            alpha = ols_given_gamma(ds, F, gamma)
        beta, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
        assert np.allclose(alpha[:2], beta)
        assert np.all(alpha[2:] == 0.0)

    def test_exact_null_model(self, rng):
        T = 30
        X = np.column_stack([np.ones(T), rng.standard_normal(T)])
        beta0 = np.array([0.5, -1.0])
        F = np.column_stack([rng.standard_normal(T), -np.ones(T)])
        ds = Dataset(X @ beta0, X, factors=F)
        alpha = ols_given_gamma(ds, F, np.array([1.0, 0.0]))
        assert np.allclose(alpha, np.concatenate([beta0, np.zeros(2)]), atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_normal_equations(self, seed):
        rng = np.random.default_rng(seed)
        ds, F, _ = make_instance(rng, T=50, d_x=2, d_f=2)
        gamma = np.array([1.0, float(rng.standard_normal())])
        d = regime_indicator(F, gamma)
        # the regular case; degenerate splits are covered separately
        if d.sum() < 2 * ds.d_x or ds.T - d.sum() < 2 * ds.d_x:
            return
        Z = build_design(ds.X, d)
        G = Z.T @ Z
        if np.linalg.cond(G) > 1e8:
            return
        alpha = ols_given_gamma(ds, F, gamma)
        ref = np.linalg.solve(G, Z.T @ ds.y)
        assert np.allclose(alpha, ref, atol=1e-10)


class TestMilpStep:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_backends_agree(self, seed):
        rng = np.random.default_rng(seed)
        ds, F, space = make_instance(rng, T=12, d_x=1, d_f=2)
        cost = rng.standard_normal(ds.T)
        out_c = milp_gamma_step(F, space, cost, backend="cells")
        out_b = milp_gamma_step(F, space, cost,
                                SolverConfig(time_limit=10, gap_tol=1e-9),
                                backend="bnb")
        if out_c is None or out_b is None:
            assert out_c is None and out_b is None
            return
        assert out_c[2] == pytest.approx(out_b[2], abs=1e-7)


class TestBcd:
    def test_trace_monotone(self, rng):
        for _ in range(5):
            ds, F, space = make_instance(rng, T=60, d_x=2, d_f=3)
            res = bcd(ds, F, space, BcdConfig(max_time_1=0.2, max_time_2=0.5),
                      SolverConfig(time_limit=1))
            tr = np.asarray(res.trace)
            assert len(tr) >= 1
            assert np.all(np.diff(tr) <= 1e-10)
            assert res.objective == pytest.approx(tr[-1], abs=1e-12)

    def test_optimal_step1_returns_immediately(self, rng):
        ds, F, space = make_instance(rng, T=14, d_x=1, d_f=2, noise=0.05)
        res = bcd(ds, F, space, BcdConfig(max_time_1=60, max_time_2=5),
                  SolverConfig(time_limit=60, gap_tol=1e-8))
        if res.status is SolveStatus.OPTIMAL:
            assert len(res.trace) == 1


class TestMetrics:
    def test_classification_error_examples(self):
        assert classification_error([1, 0, 1], [1, 0, 1]) == 0.0
        assert classification_error([1, 0, 1, 1], [1, 0, 0, 1]) == 0.25
        with pytest.raises(Exception):
            classification_error([1, 0], [1, 0, 1])

    def test_scale_invariance_of_regimes(self, rng):
        F = np.column_stack([rng.standard_normal(12), -np.ones(12)])
        g = np.array([1.0, 0.37])
        for c in (0.5, 2.0, 11.0):
            assert np.array_equal(regime_indicator(F, g), regime_indicator(F, g * c))

    def test_sandwich_properties(self, rng):
        ds, F, space = make_instance(rng, T=120, d_x=2, d_f=2)
        res = estimate_exact(ds, F, space)
        cov = alpha_covariance(ds, F, res)
        assert np.allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_sandwich_collapses_homoskedastic(self, rng):
        T = 4000
        X = np.column_stack([np.ones(T), rng.standard_normal(T)])
        F = np.column_stack([rng.standard_normal(T), -np.ones(T)])
        d = regime_indicator(F, np.array([1.0, 0.0]))
        sigma = 0.7
        y = X @ [1.0, -0.5] + (X @ [0.5, 0.25]) * d + sigma * rng.standard_normal(T)
        ds = Dataset(y, X, factors=F)
        alpha = ols_given_gamma(ds, F, np.array([1.0, 0.0]))
        from factorregime.model import EstimationResult
        res = EstimationResult(ParamVector(alpha[:2], alpha[2:], [1.0, 0.0]),
                               0.0, d, 0.0, SolveStatus.OPTIMAL, 0.0)
        cov = alpha_covariance(ds, F, res)
        Z = build_design(X, d)
        ref = sigma ** 2 * np.linalg.inv(Z.T @ Z)
        assert np.linalg.norm(cov - ref) <= 0.1 * np.linalg.norm(ref)


def test_default_search_space_rule(rng):
    ds, F, _ = make_instance(rng, T=40, d_x=2, d_f=2)
    space = default_search_space(ds, F)
    b, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
    expect = 10.0 * np.abs(b) + 1.0
    assert np.allclose(space.alpha_hi, np.concatenate([expect, expect]))
    assert np.allclose(space.alpha_lo, -space.alpha_hi)
    assert space.tau1 == 0.05 and space.tau2 == 0.95
