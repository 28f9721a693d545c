"""Best-first branch and bound over binary variables.

Node relaxations reuse one :class:`BoxQpSolver` instance (the KKT
factorization depends only on (Q, A, rho), never on variable bounds), are
warm-started from the parent, and feed two incumbent sources: integral
relaxations and a rounding heuristic that fixes binaries at rounded values
and re-solves the continuous subproblem.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..model import SolveStatus
from .problem import MioProblem, MioSolution, SolverConfig
from .qp import BoxQpSolver

__all__ = ["branch_and_bound"]

Array = NDArray[np.float64]

_INT_TOL = 1e-6
_FEAS_TOL = 1e-7


@dataclass(order=True)
class _Node:
    bound: float
    counter: int
    x_lo: Array = field(compare=False)
    x_hi: Array = field(compare=False)
    warm: tuple | None = field(compare=False, default=None)


def _interval_feasible(A, b_lo, b_hi, x_lo, x_hi) -> bool:
    if np.any(x_lo > x_hi + 1e-12):
        return False
    if A.shape[0] == 0:
        return True
    Ap = A.maximum(0)
    An = A.minimum(0)
    hi = Ap @ x_hi + An @ x_lo
    lo = Ap @ x_lo + An @ x_hi
    return not (np.any(hi < b_lo - 1e-9) or np.any(lo > b_hi + 1e-9))


def branch_and_bound(p: MioProblem, cfg: SolverConfig,
                     warm_start: Array | None = None) -> MioSolution:
    """Solve the mixed-integer problem ``p`` to within ``cfg.gap_tol``.

    Branches on the most fractional binary (ties to the lowest index), prunes
    nodes whose relaxation bound cannot beat the incumbent by more than
    ``gap_tol * max(1, |incumbent|)``, and returns status Optimal iff the
    final relative gap is within ``gap_tol`` (TimeLimit otherwise,
    Infeasible when the root relaxation is infeasible and no feasible
    point is known).
    """
    t0 = time.monotonic()
    B = p.binary_idx
    n = p.n
    engine = BoxQpSolver(p.Q, p.c, p.A, p.b_lo, p.b_hi)
    tol = cfg.relaxation_tol
    # validated slack on relaxation bounds so near-tolerance pruning stays safe
    def bound_of(obj: float) -> float:
        return obj - 10.0 * tol * (1.0 + abs(obj))

    inc_x: Array | None = None
    inc_obj = np.inf

    def try_incumbent(x: Array) -> None:
        nonlocal inc_x, inc_obj
        if x is None:
            return
        xr = np.clip(x, p.x_lo, p.x_hi)
        if len(B):
            r = np.round(xr[B])
            if np.max(np.abs(xr[B] - r)) > _INT_TOL:
                return
            xr = xr.copy()
            xr[B] = r
        viol = p.max_violation(xr)
        if viol > _FEAS_TOL * (1.0 + float(np.max(np.abs(xr), initial=0.0))):
            return
        obj = p.objective_value(xr)
        if obj < inc_obj:
            inc_obj = obj
            inc_x = xr

    if warm_start is not None:
        try_incumbent(np.asarray(warm_start, dtype=np.float64))

    def solve_node(x_lo, x_hi, warm):
        res = engine.solve(x_lo, x_hi, tol=tol, max_iter=cfg.relaxation_max_iter, warm=warm)
        if res.status == "max_iter" and warm is not None:
            res = engine.solve(x_lo, x_hi, tol=tol,
                               max_iter=2 * cfg.relaxation_max_iter, warm=None)
        res.objective += p.obj_const
        return res

    def heuristic_fix(x_rel: Array, x_lo, x_hi) -> None:
        """Round binaries, fix them, re-solve the continuous subproblem."""
        xb = np.clip(np.round(np.clip(x_rel[B], x_lo[B], x_hi[B])), 0.0, 1.0)
        lo2, hi2 = x_lo.copy(), x_hi.copy()
        lo2[B] = xb
        hi2[B] = xb
        if not _interval_feasible(p.A, p.b_lo, p.b_hi, lo2, hi2):
            return
        sub = solve_node(lo2, hi2, None)
        if sub.status == "optimal":
            try_incumbent(sub.x)

    root = solve_node(p.x_lo, p.x_hi, None)
    nodes = 1
    if root.status == "infeasible":
        if inc_x is not None:
            return MioSolution(inc_x, inc_obj, inc_obj, 0.0, SolveStatus.OPTIMAL, nodes)
        empty = np.zeros(n)
        return MioSolution(empty, np.inf, np.inf, 0.0, SolveStatus.INFEASIBLE, nodes)

    counter = 0
    heap: list[_Node] = []
    heapq.heappush(heap, _Node(bound_of(root.objective), counter,
                               p.x_lo.copy(), p.x_hi.copy(),
                               (root.x, root.y, root.z)))
    if len(B):
        heuristic_fix(root.x, p.x_lo, p.x_hi)
    else:
        try_incumbent(root.x)

    best_bound = bound_of(root.objective)
    status = SolveStatus.OPTIMAL

    def rel_gap() -> float:
        if inc_obj is np.inf or not np.isfinite(inc_obj):
            return np.inf
        return (inc_obj - best_bound) / max(1.0, abs(inc_obj))

    while heap:
        if time.monotonic() - t0 > cfg.time_limit or nodes >= cfg.node_limit:
            status = SolveStatus.TIME_LIMIT
            break
        node = heapq.heappop(heap)
        best_bound = node.bound if not heap else min(node.bound, heap[0].bound)
        if node.bound >= inc_obj - cfg.gap_tol * max(1.0, abs(inc_obj)):
            best_bound = max(best_bound, inc_obj - cfg.gap_tol * max(1.0, abs(inc_obj)))
            break  # best-first: every remaining node is prunable too
        res = solve_node(node.x_lo, node.x_hi, node.warm)
        nodes += 1
        if res.status == "infeasible":
            continue
        nb = bound_of(res.objective) if res.status == "optimal" else node.bound
        if nb >= inc_obj - cfg.gap_tol * max(1.0, abs(inc_obj)):
            continue
        frac = np.abs(res.x[B] - np.round(res.x[B])) if len(B) else np.empty(0)
        free = (node.x_hi[B] - node.x_lo[B]) > 0.5
        cand = frac * free
        if not len(B) or cand.max(initial=0.0) <= _INT_TOL:
            try_incumbent(res.x)
            if len(B) and cand.max(initial=0.0) > 0:
                # integral within tolerance but not exact: re-solve fixed
                heuristic_fix(res.x, node.x_lo, node.x_hi)
            continue
        if nodes % cfg.heuristic_period == 0 or cand.max() < 0.2:
            heuristic_fix(res.x, node.x_lo, node.x_hi)
        if not np.any(free):
            continue
        # most fractional free binary, ties to lowest index
        dist = np.where(free, np.abs(res.x[B] - np.round(res.x[B])), -1.0)
        j = B[int(np.argmax(dist))]
        for v in (0.0, 1.0):
            lo2, hi2 = node.x_lo.copy(), node.x_hi.copy()
            lo2[j] = v
            hi2[j] = v
            if not _interval_feasible(p.A, p.b_lo, p.b_hi, lo2, hi2):
                continue
            wx = res.x.copy()
            wx[j] = v
            counter += 1
            heapq.heappush(heap, _Node(nb, counter, lo2, hi2, (wx, res.y, res.z)))

    if heap:
        best_bound = min(best_bound, heap[0].bound)
    else:
        best_bound = inc_obj if np.isfinite(inc_obj) else best_bound

    if inc_x is None:
        if status == SolveStatus.TIME_LIMIT:
            return MioSolution(np.zeros(n), np.inf, best_bound, np.inf, SolveStatus.TIME_LIMIT, nodes)
        return MioSolution(np.zeros(n), np.inf, np.inf, 0.0, SolveStatus.INFEASIBLE, nodes)

    gap = max(rel_gap(), 0.0)
    if status != SolveStatus.TIME_LIMIT:
        status = SolveStatus.OPTIMAL if gap <= cfg.gap_tol else SolveStatus.TIME_LIMIT
    return MioSolution(inc_x, inc_obj, min(best_bound, inc_obj), gap, status, nodes)
