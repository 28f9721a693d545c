"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

from itertools import product

import numpy as np
import pytest

from factorregime.model import Dataset, SearchSpace
from factorregime.optim import MioProblem, solve_relaxation


def make_instance(rng, T=30, d_x=2, d_f=2, noise=0.3, tau=(0.05, 0.95),
                  gamma_bound=8.0, alpha_bound=10.0, signal="rademacher"):
    """Random two-regime instance with a true threshold in the interior."""
    X = np.column_stack([np.ones(T), rng.standard_normal((T, d_x - 1))])
    G = rng.standard_normal((T, d_f - 1))
    F = np.column_stack([G, -np.ones(T)])
    beta0 = rng.standard_normal(d_x)
    if signal == "rademacher":
        delta0 = rng.choice([-1.0, 1.0], size=d_x)
    else:
        delta0 = rng.standard_normal(d_x)
    gamma0 = np.concatenate([[1.0], 0.5 * rng.standard_normal(d_f - 2),
                             [np.quantile(G[:, 0], 0.45)]]) if d_f >= 2 else np.ones(1)
    d0 = (F @ gamma0 > 0).astype(float)
    y = X @ beta0 + (X @ delta0) * d0 + noise * rng.standard_normal(T)
    ds = Dataset(y, X, factors=F)
    space = SearchSpace(-alpha_bound * np.ones(2 * d_x), alpha_bound * np.ones(2 * d_x),
                        -gamma_bound * np.ones(d_f - 1), gamma_bound * np.ones(d_f - 1),
                        tau[0], tau[1])
    return ds, F, space


def brute_force_mio(p: MioProblem, tol=1e-10):
    """Exhaustive-fixing oracle: enumerate all binary assignments, solve each
    continuous subproblem, and return the best objective (inf if none feasible)."""
    B = p.binary_idx
    best = np.inf
    best_x = None
    for fix in product([0.0, 1.0], repeat=len(B)):
        lo, hi = p.x_lo.copy(), p.x_hi.copy()
        lo[B] = fix
        hi[B] = fix
        if np.any(lo > hi + 1e-12):
            continue
        sub = MioProblem(p.Q, p.c, p.A, p.b_lo, p.b_hi, lo, hi, [],
                         obj_const=p.obj_const)
        res = solve_relaxation(sub, tol=tol)
        if res.status == "max_iter":
            res = solve_relaxation(sub, tol=tol, max_iter=60_000)
        if res.status == "optimal" and res.objective < best:
            best = res.objective
            best_x = res.x
    return best, best_x


def grid_patterns_1d(F, lo, hi, n=100_000):
    """Sign patterns reachable on a fine 1-D gamma2 grid (oracle for cells)."""
    grid = np.linspace(lo, hi, n)
    P = (F[:, 0][None, :] + grid[:, None] * F[:, 1][None, :]) > 0
    return {tuple(row) for row in P.astype(np.int8)}


def ssr_loop_oracle(ds: Dataset, beta, delta, gamma, F):
    """Straight-loop mean squared residual, independent of the library path."""
    total = 0.0
    for t in range(ds.T):
        ind = 1.0 if float(F[t] @ gamma) > 0 else 0.0
        r = ds.y[t] - ds.X[t] @ beta - (ds.X[t] @ delta) * ind
        total += r * r
    return total / ds.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
