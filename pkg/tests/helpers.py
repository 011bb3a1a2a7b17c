"""Shared builders and exact oracles for tests and the acceptance gate."""
from fractions import Fraction

import numpy as np

from ensemble_reach.model import MatrixEnsemble, ParameterGrid


def two_cluster_ensemble(seed, K=21, n1=2, n2=2, shift=5.0, complex_=False):
    """Smooth random A(theta) = S diag(D1, D2) S^{-1} with well separated blocks.

    Within-cluster spread stays below ``shift / 3`` so grouping with
    ``gap_tol = shift / 3`` yields exactly the two clusters. Returns the
    ensemble and the oracle projector stack onto the first block, (K, n, n).
    """
    rng = np.random.default_rng(seed)

    def rnd(scale, shape):
        z = rng.normal(size=shape)
        if complex_:
            z = z + 1j * rng.normal(size=shape)
        return scale * z

    n = n1 + n2
    S0 = np.eye(n) + rnd(0.3, (n, n))
    S1 = rnd(0.2, (n, n))
    D1a, D1b = rnd(0.15, (n1, n1)), rnd(0.1, (n1, n1))
    D2a, D2b = rnd(0.15, (n2, n2)), rnd(0.1, (n2, n2))
    th = np.linspace(0, 1, K)
    A = np.zeros((K, n, n), dtype=complex)
    P = np.zeros((K, n, n), dtype=complex)
    for i, t in enumerate(th):
        S = S0 + t * S1
        D = np.zeros((n, n), dtype=complex)
        D[:n1, :n1] = D1a + t * D1b
        D[n1:, n1:] = shift * np.eye(n2) + D2a + t * D2b
        Si = np.linalg.inv(S)
        A[i] = S @ D @ Si
        E = np.zeros((n, n), dtype=complex)
        E[:n1, :n1] = np.eye(n1)
        P[i] = S @ E @ Si
    b = rng.normal(size=(K, n, 1))
    return MatrixEnsemble.from_arrays(ParameterGrid.interval(0, 1, K), A, b), P


def exact_rank(M):
    """Rank by fraction-exact Gaussian elimination."""
    rows = [[Fraction(int(x)) for x in r] for r in M]
    rank, col = 0, 0
    ncols = len(rows[0]) if rows else 0
    while rank < len(rows) and col < ncols:
        piv = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if piv is None:
            col += 1
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                f = rows[r][col] / rows[rank][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
        col += 1
    return rank


def exact_kalman(A, B):
    A = [[int(x) for x in r] for r in A]
    n = len(A)
    cols = [list(map(int, B[:, j])) for j in range(B.shape[1])]
    out = []
    for v in cols:
        blocks = []
        for _ in range(n):
            blocks.append(v)
            v = [sum(A[i][k] * v[k] for k in range(n)) for i in range(n)]
        out.append(blocks)
    flat = [blk[k] for k in range(n) for blk in out]  # [B, AB, ...] order
    return np.array(flat, dtype=object).T


def finite_reachable_oracle(As, Bs):
    """Exact reachability of the parallel connection over a finite parameter set.

    ``As`` (K, n, n) and ``Bs`` (K, n, m) must hold integers. Builds the block
    diagonal pair and checks its Kalman rank in exact rational arithmetic.
    """
    As = np.asarray(As)
    Bs = np.asarray(Bs)
    K, n, _ = As.shape
    m = Bs.shape[2]
    big = np.zeros((K * n, K * n), dtype=np.int64)
    stacked = np.zeros((K * n, m), dtype=np.int64)
    for i in range(K):
        big[i * n:(i + 1) * n, i * n:(i + 1) * n] = np.rint(As[i].real)
        stacked[i * n:(i + 1) * n] = np.rint(Bs[i].real)
    return exact_rank(exact_kalman(big, stacked)) == K * n


def random_integer_pairs(rng, K, n, m, degenerate=0.5):
    """Integer pairs, with shared blocks or zeroed inputs injected at random."""
    As = rng.integers(-3, 4, size=(K, n, n))
    Bs = rng.integers(-2, 3, size=(K, n, m))
    if K > 1 and rng.random() < degenerate:
        i, j = rng.choice(K, 2, replace=False)
        kind = rng.integers(3)
        if kind == 0:
            As[j] = As[i]
        elif kind == 1:
            # a diagonal block with an unexcited first mode
            As[j] = np.diag(rng.integers(-3, 4, size=n))
            Bs[j][0] = 0
        else:
            # share one eigenvalue through a common triangular diagonal entry
            As[i] = np.triu(As[i])
            As[j] = np.triu(As[j])
            As[j][n - 1, n - 1] = As[i][n - 1, n - 1]
    return As.astype(float), Bs.astype(float)


# criterion number -> (title, "PASS"/"FAIL", measured details, seconds)
ACCEPTANCE = {}
