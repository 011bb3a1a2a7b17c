"""Kalman matrices, controllability (companion) form and Hermite indices.

Sign convention for characteristic polynomials::

    chi(z) = z^n - a_{n-1} z^{n-1} - ... - a_1 z - a_0

so the companion matrix has ones on the subdiagonal and last column
``(a_0, ..., a_{n-1})``. ``char_coeffs[i, k]`` holds ``a_k(theta_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._util import default_rank_tol, rank_ratio
from .model import MatrixEnsemble, MatrixFamily


class UnreachableError(ValueError):
    def __init__(self, message, indices):
        super().__init__(message)
        self.indices = list(indices)


class HermiteIndexError(ValueError):
    def __init__(self, message, indices):
        super().__init__(message)
        self.indices = list(indices)


def kalman_matrix(A, B) -> np.ndarray:
    """``[B, AB, ..., A^{n-1} B]``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("kalman_matrix: non-finite input")
    n = A.shape[0]
    blocks = []
    X = B.astype(np.result_type(A, B, float))
    for _ in range(n):
        blocks.append(X)
        X = A @ X
    if not blocks:
        return np.zeros((0, 0), dtype=X.dtype)
    return np.concatenate(blocks, axis=1)


def companion(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    n = a.size
    M = np.zeros((n, n), dtype=complex)
    if n:
        M[1:, :-1] = np.eye(n - 1)
        M[:, -1] = a
    return M


def char_poly_roots(a) -> np.ndarray:
    """Roots of ``z^n - a_{n-1} z^{n-1} - ... - a_0``."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return np.zeros(0, dtype=complex)
    return np.roots(np.concatenate([[1.0], -a[::-1]]))


@dataclass(frozen=True, eq=False)
class CanonicalForm:
    T_curves: np.ndarray       # (K, n, n)
    Ac_curves: np.ndarray      # (K, n, n)
    char_coeffs: np.ndarray    # (K, n): a_0..a_{n-1}
    cond_max: float
    grid: object = None

    def coefficient_spread(self) -> np.ndarray:
        """Max deviation of each a_k from its grid mean."""
        c = self.char_coeffs
        if c.shape[0] == 0:
            return np.zeros(c.shape[1])
        return np.max(np.abs(c - c.mean(axis=0)), axis=0)

    def as_ensemble(self, ensemble: MatrixEnsemble) -> MatrixEnsemble:
        """The pair ``(A_c, e_1)`` on the same grid."""
        K, n = self.Ac_curves.shape[:2]
        e1 = np.zeros((K, n, 1), dtype=complex)
        if n:
            e1[:, 0, 0] = 1
        return MatrixEnsemble(ensemble.grid, MatrixFamily.samples(self.Ac_curves),
                              MatrixFamily.samples(e1), None, ensemble.time_kind, "complex")


def controllability_form(ensemble: MatrixEnsemble, tol: Optional[float] = None) -> CanonicalForm:
    if ensemble.m != 1:
        raise ValueError(f"controllability_form: single-input ensemble required (m={ensemble.m})")
    n, K = ensemble.n, ensemble.K
    tol = default_rank_tol(n) if tol is None else tol
    Ts = np.zeros((K, n, n), dtype=complex)
    Acs = np.zeros((K, n, n), dtype=complex)
    coeffs = np.zeros((K, n), dtype=complex)
    bad = []
    cond_max = 1.0
    for i in range(K):
        A = ensemble.A[i]
        b = ensemble.B[i][:, 0]
        R = kalman_matrix(A, b[:, None])
        if n and rank_ratio(R) <= tol:
            bad.append(i)
            continue
        if n == 0:
            continue
        a = np.linalg.solve(R, np.linalg.matrix_power(A, n) @ b)
        Ts[i] = R
        coeffs[i] = a
        Acs[i] = companion(a)
        cond_max = max(cond_max, float(np.linalg.cond(R)))
    if bad:
        pts = ", ".join(f"{i} (theta={ensemble.points[i]:.6g})" for i in bad[:5])
        raise UnreachableError(f"pointwise unreachable at theta_i: {pts}", bad)
    return CanonicalForm(Ts, Acs, coeffs, cond_max, ensemble.grid)


def _hermite_select(A, B, tol):
    """Greedy selection; returns (indices, selected column list as (j, k))."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    n, m = B.shape
    Q = np.zeros((n, 0), dtype=complex)
    idx = [0] * m
    chosen = []
    for j in range(m):
        v = B[:, j]
        for k in range(n):
            if Q.shape[1] >= n:
                break
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            r = v - Q @ (Q.conj().T @ v)
            r = r - Q @ (Q.conj().T @ r)
            nr = np.linalg.norm(r)
            if nr <= tol * nv:
                # later powers of this column lie in the same span
                break
            Q = np.concatenate([Q, (r / nr)[:, None]], axis=1)
            idx[j] += 1
            chosen.append((j, k))
            v = A @ v
    return idx, chosen


def hermite_indices(A, B, tol: Optional[float] = None) -> List[int]:
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    tol = default_rank_tol(B.shape[0]) if tol is None else tol
    return _hermite_select(A, B, tol)[0]


@dataclass(frozen=True, eq=False)
class HermiteData:
    indices: List[int]
    per_theta_indices: np.ndarray   # (K, m)
    constant: bool
    transform_curves: np.ndarray    # (K, n, n), NaN rows where not reachable
    subpairs: List[MatrixEnsemble] = field(default_factory=list)
    jumps: List[int] = field(default_factory=list)


def _hermite_transform(A, B, indices):
    n = A.shape[0]
    cols = []
    for j, h in enumerate(indices):
        v = B[:, j]
        for _ in range(h):
            cols.append(v)
            v = A @ v
    return np.array(cols, dtype=complex).T.reshape(n, len(cols))


def hermite_form(ensemble: MatrixEnsemble, tol: Optional[float] = None,
                 strict: bool = False) -> HermiteData:
    """Hermite indices across the grid and, when constant, the diagonal subpairs.

    Index jumps are reported (``constant=False`` plus ``jumps``) unless
    ``strict`` is set, in which case they raise.
    """
    n, m, K = ensemble.n, ensemble.m, ensemble.K
    tol = default_rank_tol(n) if tol is None else tol
    per = np.zeros((K, m), dtype=int)
    for i in range(K):
        per[i] = _hermite_select(ensemble.A[i], ensemble.B[i], tol)[0]
    unreach = [i for i in range(K) if per[i].sum() < n]
    if unreach:
        raise UnreachableError(
            "pointwise unreachable at grid indices " + ", ".join(map(str, unreach[:10])), unreach)
    jumps = [i for i in range(1, K) if np.any(per[i] != per[i - 1])]
    constant = not np.any(per != per[0])
    if not constant and strict:
        d = [i for i in range(K) if np.any(per[i] != per[0])]
        raise HermiteIndexError(
            f"Hermite indices vary across grid: index 0 has {per[0].tolist()}, "
            f"index {d[0]} has {per[d[0]].tolist()}", [0, d[0]])
    T = np.full((K, n, n), np.nan, dtype=complex)
    for i in range(K):
        T[i] = _hermite_transform(ensemble.A[i], ensemble.B[i], per[i])
    subpairs = []
    indices = per[0].tolist()
    if constant:
        starts = np.concatenate([[0], np.cumsum(per[0])])
        Ats = np.array([np.linalg.solve(T[i], ensemble.A[i] @ T[i]) for i in range(K)]) \
            if n else np.zeros((K, 0, 0), dtype=complex)
        for j in range(m):
            h = indices[j]
            if h == 0:
                continue
            s = slice(starts[j], starts[j + 1])
            Ajj = Ats[:, s, s]
            e1 = np.zeros((K, h, 1), dtype=complex)
            e1[:, 0, 0] = 1
            subpairs.append(MatrixEnsemble(ensemble.grid, MatrixFamily.samples(Ajj),
                                           MatrixFamily.samples(e1), None,
                                           ensemble.time_kind, "complex"))
    return HermiteData(indices, per, constant, T, subpairs, jumps)
