"""Small numerical helpers shared across modules."""
import numpy as np


def default_rank_tol(n: int) -> float:
    return 1e-9 * max(int(n), 1)


def singular_values(M) -> np.ndarray:
    M = np.asarray(M)
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def rank_ratio(M, n=None) -> float:
    """``sigma_n / sigma_max`` for the ``n`` leading rows' worth of rank (0 if rank-deficient)."""
    M = np.asarray(M)
    n = M.shape[0] if n is None else n
    if n == 0:
        return 1.0
    s = singular_values(M)
    if s.size < n or s[0] == 0:
        return 0.0
    return float(s[n - 1] / s[0])


def numerical_rank(M, tol) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    s = singular_values(M)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def spectral_norm(M) -> float:
    s = singular_values(M)
    return float(s[0]) if s.size else 0.0


def as_stack(x, K):
    """Broadcast a single matrix to a ``(K, r, c)`` stack."""
    x = np.asarray(x, dtype=complex)
    if x.ndim == 2:
        return np.broadcast_to(x, (K,) + x.shape)
    return x
