"""Exact enumeration of regime sign patterns over a hyperplane arrangement.

For gamma = (1, gamma2) with gamma2 in a box, the patterns
d_t = 1{f1_t + f2_t' gamma2 > 0} partition the box into polyhedral cells.
Every cell (intersected with the box) is a polytope whose vertices are
intersections of k = dim(gamma2) hyperplanes drawn from the T data planes
plus the 2k box facets. Perturbing each vertex into its adjacent cells along
the dual basis of the defining normals (one point per sign combination, with
out-of-box points discarded) therefore witnesses every achievable pattern.

Two entry points share that machinery:

* :func:`enumerate_cells` materializes the deduplicated pattern list with one
  witness gamma per cell (suitable for small T).
* :func:`scan_cells` streams the same candidate cells in blocks and keeps only
  the argmin of a caller-supplied per-cell objective computed from aggregated
  per-row moments, never materializing patterns (suitable for T in the
  hundreds with up to three free dimensions).

Exactness caveat: if four or more planes meet at a single point (exact data
degeneracy, measure zero for continuous designs), cells that are locally
cones at such points are found through their other vertices; adversarial
inputs where every vertex of a cell is degenerate may be missed.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from ..model import SearchSpace

__all__ = ["enumerate_cells", "scan_cells", "ScanResult"]

Array = NDArray[np.float64]

_ETA_REL = 1e-7           # perturbation scale relative to vertex magnitude
_COMBO_CACHE: dict[tuple[int, int], NDArray[np.int32]] = {}
_MAX_CACHE = 8


def _combos(n: int, k: int) -> NDArray[np.int32]:
    key = (n, k)
    if key not in _COMBO_CACHE:
        if len(_COMBO_CACHE) >= _MAX_CACHE:
            _COMBO_CACHE.pop(next(iter(_COMBO_CACHE)))
        _COMBO_CACHE[key] = np.array(list(combinations(range(n), k)), dtype=np.int32)
    return _COMBO_CACHE[key]


def _split(F: Array) -> tuple[Array, Array]:
    F = np.asarray(F, dtype=np.float64)
    return F[:, 0].copy(), F[:, 1:].copy()


def _sign_matrix(k: int) -> Array:
    g = np.meshgrid(*([[-1.0, 1.0]] * k), indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)  # (2^k, k)


def _vertex_blocks(f1: Array, F2: Array, lo: Array, hi: Array, block: int):
    """Yield (tr, is_data, V, Ainv) for non-singular in-box vertices, blockwise.

    Planes are the T data rows followed by the 2k box facets; ``tr`` holds
    (n, k) plane indices, ``V`` the vertices, ``Ainv`` the inverses of the
    defining normal matrices (rows of A are the plane normals).
    """
    T, k = F2.shape
    normals = np.vstack([F2, np.eye(k), np.eye(k)])
    offsets = np.concatenate([-f1, lo, hi])
    combs = _combos(len(normals), k)
    for i0 in range(0, len(combs), block):
        tr = combs[i0:i0 + block]
        A = normals[tr]                      # (n, k, k)
        b = offsets[tr]                      # (n, k)
        if k == 1:
            ok = np.abs(A[:, 0, 0]) > 1e-13
            tr, A, b = tr[ok], A[ok], b[ok]
            V = b / A[:, :, 0]
            Ainv = 1.0 / A
        else:
            ok = np.abs(np.linalg.det(A)) > 1e-13
            tr, A, b = tr[ok], A[ok], b[ok]
            V = np.linalg.solve(A, b[..., None])[..., 0]
            Ainv = np.linalg.inv(A)
        inb = np.all((V >= lo - 1e-9) & (V <= hi + 1e-9), axis=1)
        tr, V, Ainv = tr[inb], V[inb], Ainv[inb]
        if len(tr):
            yield tr, tr < T, V, Ainv


def _witness_points(f1: Array, F2: Array, lo: Array, hi: Array,
                    block: int = 100_000) -> Array:
    """All dual-perturbed vertex points inside the box (explicit, small T)."""
    k = F2.shape[1]
    S = _sign_matrix(k)
    pts = [((lo + hi) / 2.0)[None, :]]  # covers arrangements with no in-box vertex
    for tr, _, V, Ainv in _vertex_blocks(f1, F2, lo, hi, block):
        scale = _ETA_REL * (1.0 + np.abs(V).max(axis=1))
        dirs = np.einsum("sj,nij->nsi", S, Ainv)  # A^{-1} s per sign combo
        for cloud in (V[:, None, :] + scale[:, None, None] * dirs,
                      V[:, None, :] + scale[:, None, None] * S[None, :, :]):
            cloud = cloud.reshape(-1, k)
            keep = np.all((cloud >= lo) & (cloud <= hi), axis=1)
            pts.append(cloud[keep])
    return np.vstack(pts)


def enumerate_cells(F, space: SearchSpace) -> list[tuple[Array, NDArray[np.int8]]]:
    """Enumerate every achievable sign pattern with one witness gamma per cell.

    Parameters
    ----------
    F : (T, d_f) array
        Factor matrix; column 0 carries the normalized coefficient 1.
    space : SearchSpace
        Supplies the gamma2 box. The tau window is *not* applied here.

    Returns
    -------
    list of (gamma, d)
        ``gamma`` is the full (d_f,) witness including the leading 1 and
        ``d`` the corresponding 0/1 pattern. Requires d_f - 1 <= 3.
    """
    F = np.asarray(F, dtype=np.float64)
    f1, F2 = _split(F)
    k = F2.shape[1]
    if k > 3:
        raise ValueError(f"cell enumeration supports at most 3 free dimensions, got {k}")
    lo, hi = space.gamma2_lo, space.gamma2_hi
    if k == 0:
        return [(np.ones(1), (f1 > 0).astype(np.int8))]
    W = _witness_points(f1, F2, lo, hi)
    D = (W @ F2.T + f1) > 0.0
    packed = np.packbits(D, axis=1)
    _, first = np.unique(packed, axis=0, return_index=True)
    return [(np.concatenate([[1.0], W[i]]), D[i].astype(np.int8)) for i in sorted(first)]


@dataclass
class ScanResult:
    """Best cell found by :func:`scan_cells`."""

    value: float
    gamma2: Array
    d: NDArray[np.int8]
    count: int
    n_cells: int


def scan_cells(F, space: SearchSpace, moments: Array,
               value_fn: Callable[[Array, NDArray[np.int64]], Array],
               use_tau: bool = True, block: int = 120_000) -> ScanResult | None:
    """Exact argmin of a per-cell objective over all achievable patterns.

    ``moments`` is a (T, q) matrix of per-observation rows; for a pattern d the
    aggregate M1 = sum of rows with d_t = 1 is handed to ``value_fn(M1, count)``,
    which returns per-cell objective values (np.inf marks invalid cells).
    Cells outside the tau count window are skipped when ``use_tau``. Returns
    None when no feasible cell exists.
    """
    F = np.asarray(F, dtype=np.float64)
    f1, F2 = _split(F)
    T, k = F2.shape
    if k > 3:
        raise ValueError(f"cell scan supports at most 3 free dimensions, got {k}")
    moments = np.asarray(moments, dtype=np.float64)
    q = moments.shape[1]
    lo, hi = space.gamma2_lo, space.gamma2_hi
    kmin, kmax = space.count_window(T) if use_tau else (0, T)

    best_val = np.inf
    best_gamma2 = None
    best_d = None
    best_count = -1
    n_cells = 0

    def try_point(g2: Array) -> None:
        nonlocal best_val, best_gamma2, best_d, best_count, n_cells
        d = ((F2 @ g2 + f1) > 0.0) if k else (f1 > 0.0)
        cnt = int(d.sum())
        n_cells += 1
        if not (kmin <= cnt <= kmax):
            return
        M1 = d.astype(np.float64) @ moments
        v = float(value_fn(M1[None, :], np.array([cnt]))[0])
        if v < best_val:
            best_val = v
            best_gamma2 = np.array(g2, dtype=np.float64, copy=True)
            best_d = d.astype(np.int8)
            best_count = cnt

    if k == 0:
        try_point(np.empty(0))
    else:
        try_point((lo + hi) / 2.0)
        S = _sign_matrix(k)
        rmax = float(np.sqrt((F2 ** 2).sum(axis=1)).max()) if T else 1.0
        rowsel_cache = np.arange(block)
        for tr, is_data, V, Ainv in _vertex_blocks(f1, F2, lo, hi, block):
            n = len(tr)
            rowsel = rowsel_cache[:n] if n <= block else np.arange(n)
            marg = V @ F2.T + f1                           # (n, T)
            # neutralize defining *data* rows; their sign is set per octant
            for j in range(k):
                msk = is_data[:, j]
                marg[rowsel[msk], tr[msk, j]] = 0.0
            pos = marg > 0.0
            npos = pos.sum(axis=1)
            M1b = pos @ moments                            # (n, q)
            am = np.abs(marg)
            for j in range(k):
                msk = is_data[:, j]
                am[rowsel[msk], tr[msk, j]] = np.inf
            mmin = am.min(axis=1) if T else np.full(n, np.inf)
            # sign-safe perturbation: |f_r' Ainv' s| <= rmax ||Ainv||_F sqrt(k)
            fro = np.sqrt((Ainv ** 2).sum(axis=(1, 2)))
            eta = np.minimum(_ETA_REL * (1.0 + np.abs(V).max(axis=1)),
                             0.4 * mmin / np.maximum(rmax * fro * np.sqrt(k), 1e-300))
            stable = eta > 0
            dirs = np.einsum("sj,nij->nsi", S, Ainv)       # A^{-1} s, (n, 2^k, k)
            pts = V[:, None, :] + eta[:, None, None] * dirs
            inbox = np.all((pts >= lo) & (pts <= hi), axis=2)
            momdef = np.where(is_data[:, :, None], moments[np.where(is_data, tr, 0)], 0.0)
            for si in range(len(S)):
                add = S[si] > 0
                cnt = npos + (is_data[:, add].sum(axis=1) if add.any() else 0)
                feas = inbox[:, si] & stable & (cnt >= kmin) & (cnt <= kmax)
                nf = int(feas.sum())
                if not nf:
                    continue
                n_cells += nf
                M1 = M1b + momdef[:, add, :].sum(axis=1) if add.any() else M1b
                vals = np.where(feas, value_fn(M1, cnt), np.inf)
                j = int(np.argmin(vals))
                if vals[j] < best_val:
                    # confirm at the actual witness point (exact pattern there)
                    n_cells -= 1
                    try_point(pts[j, si])

    if best_d is None:
        return None
    return ScanResult(best_val, best_gamma2, best_d, best_count, n_cells)
