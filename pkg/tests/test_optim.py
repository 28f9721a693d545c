"""Relaxation solver, branch and bound, and cell enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorregime.model import SearchSpace, SolveStatus
from factorregime.optim import (MioProblem, SolverConfig, branch_and_bound,
                                enumerate_cells, scan_cells, solve_relaxation)

from conftest import brute_force_mio, grid_patterns_1d


def _box(n, lo=-np.inf, hi=np.inf):
    return np.full(n, lo), np.full(n, hi)


class TestRelaxation:
    def test_unconstrained_quadratic(self):
        lo, hi = _box(1)
        p = MioProblem(np.array([[1.0]]), np.array([-1.0]), None, [], [], lo, hi, [])
        r = solve_relaxation(p)
        assert r.status == "optimal"
        assert r.x[0] == pytest.approx(1.0, abs=1e-7)
        assert r.objective == pytest.approx(-0.5, abs=1e-8)

    def test_simple_lp(self):
        lo, hi = _box(1)
        p = MioProblem(None, np.array([1.0]), np.array([[1.0]]),
                       np.array([2.0]), np.array([np.inf]), lo, hi, [])
        r = solve_relaxation(p)
        assert r.status == "optimal"
        assert r.x[0] == pytest.approx(2.0, abs=1e-7)

    def test_symmetric_equality_qp(self):
        lo, hi = _box(2)
        p = MioProblem(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]),
                       np.array([1.0]), np.array([1.0]), lo, hi, [])
        r = solve_relaxation(p)
        assert np.allclose(r.x, [0.5, 0.5], atol=1e-7)

    def test_infeasible_certified(self):
        # x >= 2 and x <= 1 simultaneously
        lo, hi = _box(1)
        p = MioProblem(None, np.array([1.0]),
                       np.array([[1.0], [1.0]]), np.array([2.0, -np.inf]),
                       np.array([np.inf, 1.0]), lo, hi, [])
        r = solve_relaxation(p)
        assert r.status == "infeasible"

    def test_max_iter_reported_distinctly(self):
        lo, hi = _box(2)
        p = MioProblem(np.eye(2), np.ones(2), np.array([[1.0, -1.0]]),
                       np.array([0.0]), np.array([0.0]), lo, hi, [])
        r = solve_relaxation(p, tol=1e-12, max_iter=1)
        assert r.status in ("max_iter", "optimal")
        assert r.iterations <= 25 if r.status == "max_iter" else True

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_constraints_satisfied_within_tol(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, 4))
        A0 = rng.standard_normal((n, n))
        Q = A0 @ A0.T / n + 0.05 * np.eye(n)
        c = rng.standard_normal(n)
        A = rng.standard_normal((m, n))
        x0 = rng.uniform(-2, 2, n)          # interior point makes the rows feasible
        mid = A @ x0
        bl = mid - 0.2 - rng.random(m)
        bh = mid + 0.2 + rng.random(m)
        lo, hi = np.full(n, -4.0), np.full(n, 4.0)
        p = MioProblem(Q, c, A, bl, bh, lo, hi, [])
        r = solve_relaxation(p, tol=1e-9)
        assert r.status == "optimal"
        assert p.max_violation(r.x) <= 1e-7

    def test_matches_kkt_solution_on_equality_qp(self, rng):
        # equality-constrained QP has a closed-form KKT solution
        for _ in range(20):
            n, m = 5, 2
            A0 = rng.standard_normal((n, n))
            Q = A0 @ A0.T + 0.5 * np.eye(n)
            c = rng.standard_normal(n)
            A = rng.standard_normal((m, n))
            b = rng.standard_normal(m)
            K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
            ref = np.linalg.solve(K, np.concatenate([-c, b]))[:n]
            lo, hi = _box(n)
            p = MioProblem(Q, c, A, b, b, lo, hi, [])
            r = solve_relaxation(p, tol=1e-10)
            assert np.allclose(r.x, ref, atol=1e-6)


class TestBranchAndBound:
    def test_single_binary_quadratic(self):
        p = MioProblem(np.array([[2.0]]), np.array([-0.8]), None, [], [],
                       np.zeros(1), np.ones(1), np.array([0]), obj_const=0.16)
        s = branch_and_bound(p, SolverConfig())
        assert s.status is SolveStatus.OPTIMAL
        assert s.x[0] == 0.0
        assert s.objective == pytest.approx(0.16, abs=1e-9)

    def test_knapsack_pair(self):
        p = MioProblem(None, np.array([-1.0, -1.0]), np.array([[1.0, 1.0]]),
                       np.array([-np.inf]), np.array([1.0]),
                       np.zeros(2), np.ones(2), np.array([0, 1]))
        s = branch_and_bound(p, SolverConfig())
        assert s.objective == pytest.approx(-1.0, abs=1e-8)

    def test_infeasible_when_root_infeasible(self):
        p = MioProblem(None, np.array([1.0]), np.array([[1.0], [1.0]]),
                       np.array([2.0, -np.inf]), np.array([np.inf, 1.0]),
                       np.zeros(1), np.ones(1), np.array([0]))
        s = branch_and_bound(p, SolverConfig())
        assert s.status is SolveStatus.INFEASIBLE

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 100_000))
    def test_matches_exhaustive_fixing(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        nb = int(rng.integers(1, min(6, n) + 1))
        A0 = rng.standard_normal((n, n))
        Q = A0 @ A0.T / n + 0.1 * np.eye(n)
        c = rng.standard_normal(n)
        m = int(rng.integers(1, 4))
        A = rng.standard_normal((m, n))
        bh = rng.standard_normal(m) + 2.0
        bl = bh - 0.5 - 4.0 * rng.random(m)
        lo, hi = np.full(n, -3.0), np.full(n, 3.0)
        bidx = np.sort(rng.choice(n, size=nb, replace=False))
        lo[bidx], hi[bidx] = 0.0, 1.0
        p = MioProblem(Q, c, A, bl, bh, lo, hi, bidx)
        s = branch_and_bound(p, SolverConfig(gap_tol=1e-8))
        ref, _ = brute_force_mio(p)
        if np.isinf(ref):
            assert s.status is SolveStatus.INFEASIBLE or np.isinf(s.objective)
        else:
            assert abs(s.objective - ref) <= 1e-6

    def test_warm_start_never_worse(self, rng):
        for _ in range(30):
            n = 5
            A0 = rng.standard_normal((n, n))
            Q = A0 @ A0.T / n + 0.1 * np.eye(n)
            c = rng.standard_normal(n)
            lo, hi = np.full(n, -2.0), np.full(n, 2.0)
            bidx = np.array([0, 1, 2])
            lo[bidx], hi[bidx] = 0.0, 1.0
            p = MioProblem(Q, c, None, [], [], lo, hi, bidx)
            warm = np.clip(rng.standard_normal(n), lo, hi)
            warm[bidx] = rng.integers(0, 2, 3)
            warm_obj = p.objective_value(warm)
            s = branch_and_bound(p, SolverConfig(node_limit=3), warm_start=warm)
            assert s.objective <= warm_obj + 1e-9


class TestEnumerateCells:
    def test_two_point_hand_example(self):
        F = np.array([[1.0, -1.0], [-1.0, -1.0]])
        space = SearchSpace([-5, -5], [5, 5], [-2.0], [2.0])
        cells = enumerate_cells(F, space)
        pats = {tuple(d) for _, d in cells}
        assert pats == {(1, 1), (1, 0), (0, 0)}
        for gamma, d in cells:
            assert np.array_equal((F @ gamma > 0).astype(np.int8), d)

    def test_single_row_two_cells(self):
        F = np.array([[0.5, -1.0], [0.5, -1.0]])[:1]
        space = SearchSpace([-5, -5], [5, 5], [-2.0], [2.0])
        cells = enumerate_cells(F, space)
        assert len(cells) == 2  # breakpoint 0.5 inside the box

    def test_breakpoint_outside_box_single_cell(self):
        F = np.array([[5.0, -1.0]])
        space = SearchSpace([-5, -5], [5, 5], [-2.0], [2.0])
        assert len(enumerate_cells(F, space)) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cell_count_bound_1d(self, seed):
        rng = np.random.default_rng(seed)
        T = 10
        F = np.column_stack([rng.standard_normal(T), -np.ones(T)])
        space = SearchSpace([-5, -5], [5, 5], [-8.0], [8.0])
        assert len(enumerate_cells(F, space)) <= T + 1

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_grid_patterns_subset_of_enumerated(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(2, 12))
        F = np.column_stack([rng.standard_normal(T), -np.ones(T)])
        space = SearchSpace([-5, -5], [5, 5], [-6.0], [6.0])
        enum = {tuple(d) for _, d in enumerate_cells(F, space)}
        grid = grid_patterns_1d(F, -6.0, 6.0, n=20_000)
        assert grid <= enum

    def test_grid_patterns_dense_check(self, rng):
        # spec-scale grid: 1e5 points on a handful of instances
        for _ in range(3):
            T = 10
            F = np.column_stack([rng.standard_normal(T), -np.ones(T)])
            space = SearchSpace([-5, -5], [5, 5], [-6.0], [6.0])
            enum = {tuple(d) for _, d in enumerate_cells(F, space)}
            assert grid_patterns_1d(F, -6.0, 6.0, n=100_000) <= enum

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 3))
    def test_multidim_contains_random_probe_patterns(self, seed, k):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(2, 10))
        F = np.column_stack([rng.standard_normal((T, k)), -np.ones(T)])
        space = SearchSpace([-5, -5], [5, 5], -6.0 * np.ones(k), 6.0 * np.ones(k))
        enum = {tuple(d) for _, d in enumerate_cells(F, space)}
        probes = rng.uniform(-6, 6, size=(4000, k))
        # index = f1 + F2 @ g for the layout [f1 | F2]
        probe_pats = {tuple(r) for r in
                      ((F[:, 0][None, :] + probes @ F[:, 1:].T) > 0).astype(np.int8)}
        assert probe_pats <= enum

    def test_dimension_cap(self):
        F = np.column_stack([np.ones((2, 5)), -np.ones(2)])
        space = SearchSpace([-1, -1], [1, 1], -np.ones(5), np.ones(5))
        with pytest.raises(ValueError, match="3 free dimensions"):
            enumerate_cells(F, space)


class TestScanCells:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_scan_matches_enumeration_argmin(self, seed, k):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(4, 14))
        F = np.column_stack([rng.standard_normal((T, k)), -np.ones(T)])
        space = SearchSpace([-5, -5], [5, 5], -6.0 * np.ones(k), 6.0 * np.ones(k),
                            0.05, 0.95)
        cost = rng.standard_normal(T)
        res = scan_cells(F, space, cost[:, None], lambda M, cnt: M[:, 0])
        kmin, kmax = space.count_window(T)
        best = np.inf
        for _, d in enumerate_cells(F, space):
            s = int(d.sum())
            if kmin <= s <= kmax:
                best = min(best, float(cost[d == 1].sum()))
        if res is None:
            assert np.isinf(best)
        else:
            assert res.value == pytest.approx(best, abs=1e-10)
            assert kmin <= res.count <= kmax

    def test_no_feasible_cell_returns_none(self):
        F = np.column_stack([np.full(4, 3.0), -np.ones(4)])
        # breakpoints at 3; box keeps index positive always -> only d = 1111,
        # which violates a tight tau window
        space = SearchSpace([-5, -5], [5, 5], [-1.0], [1.0], 0.25, 0.75)
        res = scan_cells(F, space, np.ones((4, 1)), lambda M, cnt: M[:, 0])
        assert res is None
