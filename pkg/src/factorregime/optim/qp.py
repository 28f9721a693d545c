"""First-order convex QP/LP solver for node relaxations.

Operator-splitting (ADMM) scheme on

    min 0.5 x'Qx + c'x   s.t.   l <= [A; I] x <= u,

with Ruiz equilibration, a cached factorization reused across warm-started
re-solves (branch-and-bound nodes only move the bound segment of l, u), an
active-set polish step for high-accuracy solutions, and residual-based
infeasibility certificates. LPs run through the same scheme: the sigma
regularization handles Q = 0 and the polish step removes first-order blur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .problem import MioProblem

__all__ = ["RelaxationResult", "solve_relaxation", "BoxQpSolver"]

Array = NDArray[np.float64]

_ALPHA = 1.6          # over-relaxation
_SIGMA = 1e-6         # x-regularization
_RHO_EQ_BOOST = 1e3   # rho multiplier on rows with b_lo == b_hi
_CHECK_EVERY = 25


@dataclass
class RelaxationResult:
    x: Array
    objective: float
    status: str            # "optimal" | "max_iter" | "infeasible"
    iterations: int
    primal_res: float
    dual_res: float
    y: Array | None = None
    z: Array | None = None


class BoxQpSolver:
    """Reusable ADMM solver bound to fixed (Q, c, A); variable bounds may move."""

    def __init__(self, Q, c: Array, A, b_lo: Array, b_hi: Array):
        self.n = len(c)
        self.m = A.shape[0] if A is not None else 0
        self.c = np.asarray(c, dtype=np.float64)
        A = sp.csr_matrix(A) if self.m else sp.csr_matrix((0, self.n))
        self.Q = sp.csr_matrix(Q) if Q is not None else sp.csr_matrix((self.n, self.n))
        self.Abar = sp.vstack([A, sp.identity(self.n, format="csr")], format="csr")
        self.AbarT = sp.csr_matrix(self.Abar.T)
        self.b_lo = np.asarray(b_lo, dtype=np.float64)
        self.b_hi = np.asarray(b_hi, dtype=np.float64)
        self._equalize()
        eq = np.isclose(self.b_lo, self.b_hi)
        self.rho_pattern = np.ones(self.m + self.n)
        self.rho_pattern[:self.m][eq] = _RHO_EQ_BOOST
        self._rho0 = 0.1
        self._factors: dict[float, tuple] = {}

    # -- scaling ---------------------------------------------------------
    def _equalize(self, iters: int = 10):
        """Modified Ruiz equilibration of [[Q, A'], [A, 0]] plus cost scaling."""
        n, mt = self.n, self.m + self.n
        D = np.ones(n)
        E = np.ones(mt)
        for _ in range(iters):
            Qs = sp.diags(D) @ self.Q @ sp.diags(D)
            As = sp.diags(E) @ self.Abar @ sp.diags(D)
            colq = np.abs(Qs).max(axis=0).toarray().ravel() if Qs.nnz else np.zeros(n)
            cola = np.abs(As).max(axis=0).toarray().ravel() if As.nnz else np.zeros(n)
            D /= np.sqrt(np.maximum(np.maximum(colq, cola), 1e-8))
            rowa = np.abs(As).max(axis=1).toarray().ravel() if As.nnz else np.zeros(mt)
            E /= np.sqrt(np.maximum(rowa, 1e-8))
        Qs = sp.diags(D) @ self.Q @ sp.diags(D)
        qnorm = np.abs(Qs).max(axis=0).toarray().ravel() if Qs.nnz else np.zeros(n)
        cn = np.abs(D * self.c)
        cost = 1.0 / max(float(np.mean(qnorm)) if n else 0.0,
                         float(cn.max()) if cn.size else 0.0, 1e-8)
        self.D, self.E, self.cost = D, E, cost
        self.Qs = sp.csr_matrix(cost * Qs)
        self.As = sp.csr_matrix(sp.diags(E) @ self.Abar @ sp.diags(D))
        self.AsT = sp.csr_matrix(self.As.T)
        self.cs = cost * D * self.c

    def _get_factor(self, rho: float):
        if rho not in self._factors:
            if len(self._factors) > 12:
                self._factors.pop(next(iter(self._factors)))
            rhov = rho * self.rho_pattern
            M = (self.Qs + _SIGMA * sp.identity(self.n)
                 + self.AsT @ sp.diags(rhov) @ self.As).tocsc()
            self._factors[rho] = (spla.splu(M), rhov)
        return self._factors[rho]

    # -- main loop -------------------------------------------------------
    def solve(self, x_lo: Array, x_hi: Array, tol: float = 1e-9,
              max_iter: int = 20000, warm: tuple | None = None,
              adaptive_rho: bool = True) -> RelaxationResult:
        n, m = self.n, self.m
        Eb = self.E[m:]
        ls = np.concatenate([self.E[:m] * self.b_lo, Eb * x_lo])
        us = np.concatenate([self.E[:m] * self.b_hi, Eb * x_hi])

        if warm is not None:
            x0, y0, z0 = warm
            xs = np.asarray(x0, dtype=np.float64) / self.D
            ys = np.asarray(y0, dtype=np.float64) * self.cost / self.E
            zs = np.clip(np.asarray(z0, dtype=np.float64) * self.E, ls, us)
        else:
            xs = np.zeros(n)
            ys = np.zeros(m + n)
            zs = np.clip(np.zeros(m + n), ls, us)

        rho = self._rho0
        solve_fac, rhov = self._get_factor(rho)
        status = "max_iter"
        it = 0
        rp_u = rd_u = np.inf
        n_refactor = 0
        next_adapt = 100
        next_polish = 150
        polished = None
        while it < max_iter:
            for _ in range(_CHECK_EVERY):
                rhs = _SIGMA * xs - self.cs + self.AsT @ (rhov * zs - ys)
                xt = solve_fac.solve(rhs)
                zt = self.As @ xt
                xs = _ALPHA * xt + (1 - _ALPHA) * xs
                zh = _ALPHA * zt + (1 - _ALPHA) * zs
                w = zh + ys / rhov
                zs = np.clip(w, ls, us)
                ys_new = rhov * (w - zs)
                dy = ys_new - ys
                ys = ys_new
                it += 1
            x = self.D * xs
            z = zs / self.E
            y = self.E * ys / self.cost
            Ax = self.Abar @ x
            Qx = self.Q @ x
            Aty = self.AbarT @ y
            rp_u = float(np.max(np.abs(Ax - z), initial=0.0))
            rd_u = float(np.max(np.abs(Qx + self.c + Aty), initial=0.0))
            sp_ = 1.0 + max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
            sd_ = 1.0 + max(np.max(np.abs(Qx), initial=0.0),
                            np.max(np.abs(self.c), initial=0.0),
                            np.max(np.abs(Aty), initial=0.0))
            if rp_u <= tol * sp_ and rd_u <= tol * sd_:
                status = "optimal"
                break
            if it >= next_polish:
                # first-order progress is slow on LP-like problems; an early
                # active-set polish often certifies the exact solution
                next_polish = int(next_polish * 2.5)
                px, py, pz, ok = self._polish(x, y, x_lo, x_hi, tol)
                if ok:
                    polished = (px, py, pz)
                    status = "optimal"
                    break
            if self._primal_infeasible(dy, ls, us):
                status = "infeasible"
                break
            if adaptive_rho and n_refactor < 12 and it >= next_adapt:
                next_adapt = int(next_adapt * 2.2)
                scale = np.sqrt((rp_u / sp_) / max(rd_u / sd_, 1e-300))
                if scale > 5 or scale < 0.2:
                    rho = float(np.clip(rho * scale, 1e-6, 1e6))
                    solve_fac, rhov = self._get_factor(rho)
                    n_refactor += 1

        x = self.D * xs
        z = zs / self.E
        y = self.E * ys / self.cost
        if polished is not None:
            x, y, z = polished
        elif status != "infeasible":
            px, py, pz, ok = self._polish(x, y, x_lo, x_hi, tol)
            if ok:
                x, y, z = px, py, pz
                status = "optimal"
        obj = 0.5 * float(x @ (self.Q @ x)) + float(self.c @ x)
        return RelaxationResult(x, obj, status, it, rp_u, rd_u, y=y, z=z)

    def _primal_infeasible(self, dys: Array, ls: Array, us: Array) -> bool:
        """OSQP-style certificate from the scaled dual increment."""
        nrm = float(np.max(np.abs(dys), initial=0.0))
        if nrm < 1e-13:
            return False
        v = dys / nrm
        if float(np.max(np.abs(self.AsT @ v), initial=0.0)) > 1e-8:
            return False
        pos = np.maximum(v, 0.0)
        neg = np.minimum(v, 0.0)
        with np.errstate(invalid="ignore"):
            val = float(np.sum(np.where(pos > 1e-12, us * pos, 0.0))
                        + np.sum(np.where(neg < -1e-12, ls * neg, 0.0)))
        return bool(np.isfinite(val) and val < -1e-10)

    def _polish(self, x: Array, y: Array, x_lo: Array, x_hi: Array, tol: float):
        """Equality-solve on candidate active sets; accept when KKT checks out."""
        l_full = np.concatenate([self.b_lo, x_lo])
        u_full = np.concatenate([self.b_hi, x_hi])
        for act_rel in (1e-6, 1e-4, 1e-8):
            out = self._polish_once(x, y, x_lo, x_hi, l_full, u_full, tol, act_rel)
            if out[3]:
                return out
        return x, y, None, False

    def _polish_once(self, x: Array, y: Array, x_lo: Array, x_hi: Array,
                     l_full: Array, u_full: Array, tol: float, act_rel: float):
        z = self.Abar @ x
        act_tol = act_rel * (1.0 + np.abs(z))
        near_lo = np.abs(z - l_full) < act_tol
        near_hi = np.abs(z - u_full) < act_tol
        lo_act = np.isfinite(l_full) & ((y < -1e-9) | near_lo)
        hi_act = np.isfinite(u_full) & ((y > 1e-9) | near_hi)
        tie = lo_act & hi_act
        closer_lo = np.abs(z - l_full) <= np.abs(z - u_full)
        lo_act = np.where(tie, closer_lo, lo_act)
        hi_act = np.where(tie, ~closer_lo, hi_act)
        act = lo_act | hi_act
        k = int(act.sum())
        b_act = np.where(lo_act, l_full, u_full)[act]
        A_act = sp.csr_matrix(self.Abar[act])
        n = self.n
        reg = 1e-11
        blocks = [[self.Q + reg * sp.identity(n), A_act.T if k else None],
                  [A_act if k else None, -reg * sp.identity(k) if k else None]]
        if k == 0:
            K = (self.Q + reg * sp.identity(n)).tocsc()
            rhs = -self.c
        else:
            K = sp.bmat(blocks, format="csc")
            rhs = np.concatenate([-self.c, b_act])
        try:
            fac = spla.splu(K)
            sol = fac.solve(rhs)
            sol = sol + fac.solve(rhs - K @ sol)  # one refinement pass
        except RuntimeError:
            return x, y, None, False
        xp = sol[:n]
        yp = np.zeros(self.m + n)
        if k:
            yp[act] = sol[n:]
            # dual feasibility: y <= 0 at lower-active, y >= 0 at upper-active
            # (rows with l == u excepted)
            ineq = ~np.isclose(l_full, u_full)
            bad = (lo_act & ineq & (yp > 1e-7)) | (hi_act & ineq & (yp < -1e-7))
            if np.any(bad):
                return x, y, None, False
        zp = self.Abar @ xp
        viol = max(np.max(l_full - zp, initial=0.0), np.max(zp - u_full, initial=0.0))
        rd = np.max(np.abs(self.Q @ xp + self.c + self.AbarT @ yp), initial=0.0)
        sd_ = 1.0 + max(np.max(np.abs(self.Q @ xp), initial=0.0),
                        np.max(np.abs(self.c), initial=0.0),
                        np.max(np.abs(self.AbarT @ yp), initial=0.0))
        feas_tol = max(tol, 1e-9)
        if viol <= feas_tol * (1.0 + np.max(np.abs(zp), initial=0.0)) and rd <= feas_tol * sd_:
            return xp, yp, zp, True
        return x, y, None, False


def solve_relaxation(p: MioProblem, tol: float = 1e-9, max_iter: int = 20000,
                     warm: tuple | None = None) -> RelaxationResult:
    """Solve the continuous relaxation of ``p`` (binaries relaxed into their bounds)."""
    solver = BoxQpSolver(p.Q, p.c, p.A, p.b_lo, p.b_hi)
    res = solver.solve(p.x_lo, p.x_hi, tol=tol, max_iter=max_iter, warm=warm)
    res.objective += p.obj_const
    return res
