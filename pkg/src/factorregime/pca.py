"""Principal-component estimation of latent switching factors.

Factors are the top-K eigenvectors of YY'/(NT) scaled by sqrt(T), so that
F1'F1/T = I_K; loadings follow as Y'F1/T. The rotation matrix relating the
estimated factors to the simulation truth, the soft-thresholded idiosyncratic
covariance, and a psd matrix square root round out the toolkit used by the
bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "FactorEstimate",
    "RotationMatrix",
    "estimate_factors",
    "rotation_matrix",
    "threshold_covariance",
    "matrix_sqrt_psd",
]

Array = NDArray[np.float64]


@dataclass(frozen=True)
class FactorEstimate:
    """PCA factor extraction output.

    F1 holds the estimated factors (T x K, normalized F1'F1/T = I), F_full
    appends the model constant -1, Lambda the N x K loadings, V the diagonal
    matrix of leading eigenvalues of YY'/(NT), and E the residual panel.
    """

    F1: Array
    F_full: Array
    Lambda: Array
    V: Array
    E: Array
    K: int

    @property
    def N(self) -> int:
        return self.Lambda.shape[0]

    @property
    def T(self) -> int:
        return self.F1.shape[0]


@dataclass(frozen=True)
class RotationMatrix:
    """Block-diagonal rotation diag(H_tilde, 1) linking PCA factors to truth."""

    H: Array

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        object.__setattr__(self, "H", H)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if H[-1, -1] != 1.0 or np.any(H[-1, :-1] != 0.0) or np.any(H[:-1, -1] != 0.0):
            raise ValueError("H must be block diagonal with lower-right entry 1")
        if not np.isfinite(np.linalg.cond(H)):
            raise ValueError("H is singular")

    @property
    def block(self) -> Array:
        """The K x K factor block."""
        return self.H[:-1, :-1]


def _fix_signs(F1: Array) -> Array:
    """Make each column's first non-negligible entry positive (determinism)."""
    out = F1.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))[0]
        if len(nz) and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def estimate_factors(panel, K: int) -> FactorEstimate:
    """Extract K factors from a T x N panel by principal components.

    The factors are eigenvectors of YY'/(NT) for the K largest eigenvalues,
    scaled by sqrt(T) and ordered by decreasing eigenvalue.
    """
    Y = np.asarray(panel, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("panel must be 2-D")
    T, N = Y.shape
    if not (1 <= K <= min(T, N)):
        raise ValueError(f"K={K} out of range for a {T}x{N} panel")
    if not np.all(np.isfinite(Y)):
        raise ValueError("panel contains non-finite values")
    G = Y @ Y.T / (N * T)
    w, U = np.linalg.eigh(G)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("eigen-decomposition failed on degenerate panel")
    order = np.argsort(w)[::-1][:K]
    V = np.diag(w[order])
    F1 = _fix_signs(U[:, order] * np.sqrt(T))
    Lam = Y.T @ F1 / T
    E = Y - F1 @ Lam.T
    return FactorEstimate(F1, np.hstack([F1, -np.ones((T, 1))]), Lam, V, E, K)


def rotation_matrix(fe: FactorEstimate, g_true, lambda_true=None) -> RotationMatrix:
    """Rotation diag(H_tilde, 1) with H_tilde' = V^{-1} (F1'G/T) (Lambda'Lambda/N).

    ``g_true`` holds the generating factors (T x K, no constant column) and
    ``lambda_true`` the loadings of the data-generating factor model; on the
    original sample that is the simulation truth, in the bootstrap world it
    is the estimated loading matrix. Defaults to the estimated loadings.
    """
    G = np.asarray(g_true, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    if G.shape != (fe.T, fe.K):
        raise ValueError(f"g_true must be ({fe.T}, {fe.K})")
    Lam = fe.Lambda if lambda_true is None else np.asarray(lambda_true, dtype=np.float64)
    if Lam.shape != (fe.N, fe.K):
        raise ValueError(f"lambda_true must be ({fe.N}, {fe.K})")
    vdiag = np.diag(fe.V)
    if np.any(vdiag <= 1e-14 * vdiag.max()):
        raise np.linalg.LinAlgError("singular eigenvalue matrix V")
    Ht_T = np.diag(1.0 / vdiag) @ (fe.F1.T @ G / fe.T) @ (Lam.T @ Lam / fe.N)
    K = fe.K
    H = np.zeros((K + 1, K + 1))
    H[:K, :K] = Ht_T.T
    H[K, K] = 1.0
    return RotationMatrix(H)


def threshold_covariance(E, c_thresh: float = 0.5) -> Array:
    """Soft-thresholded sample covariance of the residual panel.

    Off-diagonal entries are shrunk at the adaptive level
    c_thresh * sqrt(log N / T) * sqrt(s_ii s_jj); the diagonal is kept and
    negative eigenvalues are clipped at a small floor so a matrix square
    root always exists.
    """
    E = np.asarray(E, dtype=np.float64)
    T, N = E.shape
    if T < 2:
        raise ValueError("need T >= 2 to form a covariance")
    Ec = E - E.mean(axis=0)
    S = Ec.T @ Ec / T
    dvar = np.diag(S).copy()
    if np.isfinite(c_thresh):
        lam = c_thresh * np.sqrt(np.log(max(N, 2)) / T) * np.sqrt(np.outer(dvar, dvar))
        off = S - np.diag(dvar)
        off = np.sign(off) * np.maximum(np.abs(off) - lam, 0.0)
        S = off + np.diag(dvar)
    else:
        S = np.diag(dvar)
    S = (S + S.T) / 2.0
    w, U = np.linalg.eigh(S)
    floor = 1e-12 * max(w.max(), 1.0)
    if w.min() < floor:
        S = (U * np.maximum(w, floor)) @ U.T
        S = (S + S.T) / 2.0
    return S


def matrix_sqrt_psd(S) -> Array:
    """Symmetric square root R with R R' = S, clipping tiny negative eigenvalues."""
    S = np.asarray(S, dtype=np.float64)
    scale = max(1.0, np.abs(S).max())
    if not np.allclose(S, S.T, atol=1e-8 * scale):
        raise ValueError("matrix is not symmetric")
    w, U = np.linalg.eigh((S + S.T) / 2.0)
    if w.min() < -1e-10 * scale:
        raise ValueError(f"matrix has negative eigenvalue {w.min():.3e}")
    return (U * np.sqrt(np.maximum(w, 0.0))) @ U.T
