"""Parameter-independent control synthesis via polynomial approximation.

A polynomial tuple (p_1, ..., p_m) steers the discrete-time ensemble from rest
to ``sum_j p_j(A) b_j`` in ``deg + 1`` steps; the inputs are the monomial
coefficients read backwards (see :func:`inputs_from_polynomials`).

Fits never touch raw Vandermonde or Krylov matrices: each input column gets
its own Arnoldi basis ``q_k(A) b_j`` built on the stacked grid, and the
polynomials keep the Hessenberg recurrence so they can be evaluated at new
points or matrices.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.spatial import cKDTree

from .canonical import CanonicalForm, controllability_form
from .kernels import cluster_radius
from .model import InputPlan, MatrixEnsemble, TargetEnsemble, vector_norms
from .spectral import is_nonseparating

LAWSON_ITERATIONS = 40
LAWSON_SPREAD = 1e-3
IRLS_FLOOR = 1e-12
BREAKDOWN_TOL = 1e-10
MAX_COMBINED_DEGREE = 200
MONOMIAL_WARN_DEGREE = 30


class NotAchievedError(RuntimeError):
    """Raised when no degree up to the budget meets the tolerance; ``result`` holds the best fit."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConditioningWarning(UserWarning):
    pass


def parse_norm(norm) -> tuple:
    """``"sup"``, ``"l2"``, ``"lq:<q>"`` or ``("lq", q)`` to ``(kind, q)``."""
    if isinstance(norm, tuple):
        kind, q = norm
        return parse_norm(f"{kind}:{q}")
    s = str(norm).strip().lower()
    if s in ("sup", "inf", "uniform"):
        return "sup", math.inf
    if s == "l2":
        return "lq", 2.0
    if s.startswith("lq"):
        try:
            q = float(s.split(":", 1)[1])
        except (IndexError, ValueError):
            raise ValueError(f"norm: cannot parse {norm!r}; expected lq:<q>") from None
        if q < 1:
            raise ValueError("norm: q must be >= 1")
        return "lq", q
    raise ValueError(f"norm: unknown norm {norm!r}")


def _norm_label(kind, q):
    return "sup" if kind == "sup" else ("l2" if q == 2 else f"lq:{q:g}")


def _matvec(A, v):
    return np.einsum("kij,kj->ki", A, v)


# ---------------------------------------------------------------------------
# polynomial representations


class MonomialPolynomial:
    basis = "monomial"

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex))
        self.coeffs = c if c.size else np.zeros(1, dtype=complex)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for c in self.coeffs[::-1]:
            out = out * z + c
        return out

    def apply(self, A, v):
        out = np.zeros_like(v, dtype=complex)
        for c in self.coeffs[::-1]:
            out = _matvec(A, out) + c * v
        return out

    def to_monomial(self):
        return self

    def to_document(self):
        return {"basis": "monomial", "coeffs": [[c.real, c.imag] for c in self.coeffs]}


class ArnoldiPolynomial:
    """``p = sum_k c_k q_k`` with ``q_0 = 1/h0`` and the Hessenberg recurrence
    ``h_{k,k-1} q_k = z q_{k-1} - sum_{i<k} h_{i,k-1} q_i``."""
    basis = "arnoldi"

    def __init__(self, H, h0, coeffs):
        self.H = np.asarray(H, dtype=complex)
        self.h0 = float(h0)
        self.coeffs = np.asarray(coeffs, dtype=complex)

    @property
    def degree(self) -> int:
        return max(self.coeffs.size - 1, 0)

    def _run(self, first, step):
        if self.coeffs.size == 0:
            return None
        Q = [first / self.h0]
        out = self.coeffs[0] * Q[0]
        for k in range(1, self.coeffs.size):
            u = step(Q[-1])
            for i in range(k):
                u = u - self.H[i, k - 1] * Q[i]
            Q.append(u / self.H[k, k - 1])
            out = out + self.coeffs[k] * Q[k]
        return out

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = self._run(np.ones_like(z), lambda q: z * q)
        return np.zeros_like(z) if out is None else out

    def apply(self, A, v):
        v = np.asarray(v, dtype=complex)
        out = self._run(v, lambda q: _matvec(A, q))
        return np.zeros_like(v) if out is None else out

    def to_monomial(self):
        if self.degree > MONOMIAL_WARN_DEGREE:
            warnings.warn(f"monomial conversion at degree {self.degree} is ill-conditioned",
                          ConditioningWarning, stacklevel=2)
        if self.coeffs.size == 0:
            return MonomialPolynomial([0])
        Q = [np.array([1.0 / self.h0], dtype=complex)]
        total = self.coeffs[0] * Q[0]
        for k in range(1, self.coeffs.size):
            u = npoly.polymulx(Q[-1])
            for i in range(k):
                u = npoly.polysub(u, self.H[i, k - 1] * Q[i])
            Q.append(u / self.H[k, k - 1])
            total = npoly.polyadd(total, self.coeffs[k] * Q[k])
        return MonomialPolynomial(total)

    def to_document(self):
        r = self.coeffs.size
        return {"basis": "arnoldi", "h0": self.h0,
                "coeffs": [[c.real, c.imag] for c in self.coeffs],
                "hessenberg": [[[x.real, x.imag] for x in row[:max(r - 1, 0)]]
                               for row in self.H[:r]]}


def _compose(outer: MonomialPolynomial, inner_coeffs) -> np.ndarray:
    out = np.array([outer.coeffs[-1]], dtype=complex)
    for c in outer.coeffs[-2::-1]:
        out = npoly.polyadd(npoly.polymul(out, inner_coeffs), [c])
    return out


class StructuredPolynomial:
    """``p(z) = sum_k p_k(g(z)) z^{k-1}`` with a fixed polynomial ``g``."""
    basis = "structured"

    def __init__(self, parts, g_coeffs):
        self.parts = list(parts)
        self.g = MonomialPolynomial(g_coeffs)

    @property
    def degree(self) -> int:
        n = self.g.degree
        return max(n * p.degree + k for k, p in enumerate(self.parts))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        G = self.g(z)
        out = np.zeros_like(z)
        zk = np.ones_like(z)
        for p in self.parts:
            out = out + p(G) * zk
            zk = zk * z
        return out

    def apply(self, A, v):
        n = A.shape[-1]
        eye = np.broadcast_to(np.eye(n), A.shape)
        G = np.zeros_like(A, dtype=complex)
        for c in self.g.coeffs[::-1]:
            G = G @ A + c * eye
        out = np.zeros_like(v, dtype=complex)
        w = np.asarray(v, dtype=complex)
        for p in self.parts:
            out = out + p.apply(G, w)
            w = _matvec(A, w)
        return out

    def to_monomial(self):
        total = np.zeros(1, dtype=complex)
        for k, p in enumerate(self.parts):
            c = _compose(p.to_monomial(), self.g.coeffs)
            total = npoly.polyadd(total, np.concatenate([np.zeros(k), c]))
        return MonomialPolynomial(total)

    def to_document(self):
        return {"basis": "structured", "g": self.g.to_document()["coeffs"],
                "parts": [p.to_document() for p in self.parts]}


class CombinedPolynomial:
    """``p = sum_i q_i p_i``, evaluated in factored form."""
    basis = "combined"

    def __init__(self, terms):
        self.terms = list(terms)

    @property
    def degree(self) -> int:
        return max(q.degree + p.degree for q, p in self.terms)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return sum(q(z) * p(z) for q, p in self.terms)

    def apply(self, A, v):
        return sum(q.apply(A, p.apply(A, v)) for q, p in self.terms)

    def to_monomial(self):
        total = np.zeros(1, dtype=complex)
        for q, p in self.terms:
            total = npoly.polyadd(total, npoly.polymul(q.to_monomial().coeffs,
                                                       p.to_monomial().coeffs))
        return MonomialPolynomial(total)

    def to_document(self):
        return {"basis": "combined",
                "terms": [{"indicator": q.to_document(), "block": p.to_document()}
                          for q, p in self.terms]}


def apply_polynomials(polys, A, B) -> np.ndarray:
    """``sum_j p_j(A) b_j`` over the grid; ``A`` (K, n, n), ``B`` (K, n, m)."""
    out = np.zeros(B.shape[:2], dtype=complex)
    for j, p in enumerate(polys):
        out = out + p.apply(A, B[:, :, j])
    return out


# ---------------------------------------------------------------------------
# Arnoldi bases and weighted fits


def krylov_basis(A, v, degree, tol=BREAKDOWN_TOL):
    """Orthonormal basis ``q_k(A) v`` (k <= degree) of the stacked Krylov space.

    Inner product is the stacked Euclidean one divided by K, so for scalar
    nodes with ``v = 1`` the first basis vector is the constant 1. Stops at
    breakdown, where the next vector is numerically in the span.
    Returns ``W (K, n, r)``, ``H (r, r-1)`` and ``h0``.
    """
    A = np.asarray(A, dtype=complex)
    v = np.asarray(v, dtype=complex)
    K, n = v.shape
    flat_n = K * n
    h0 = float(np.linalg.norm(v)) / math.sqrt(K)
    if h0 == 0 or flat_n == 0:
        return np.zeros((K, n, 0), dtype=complex), np.zeros((0, 0), dtype=complex), 0.0
    cols = [(v / h0).reshape(-1)]
    H = np.zeros((degree + 1, max(degree, 0)), dtype=complex)
    for k in range(1, degree + 1):
        if len(cols) >= flat_n:
            break
        u = _matvec(A, cols[-1].reshape(K, n)).reshape(-1)
        un = np.linalg.norm(u)
        Wm = np.array(cols)
        for _ in range(2):
            h = Wm.conj() @ u / K
            u = u - h @ Wm
            H[:k, k - 1] += h
        hk = np.linalg.norm(u) / math.sqrt(K)
        if un == 0 or hk <= tol * un / math.sqrt(K):
            H[:k, k - 1] = 0
            break
        H[k, k - 1] = hk
        cols.append(u / hk)
    r = len(cols)
    W = np.array(cols).T.reshape(K, n, r)
    return W, H[:r, :max(r - 1, 0)], h0


@dataclass
class _Basis:
    W: List[np.ndarray]
    H: List[np.ndarray]
    h0: List[float]

    def design(self, degree):
        blocks = [W[:, :, :degree + 1] for W in self.W]
        return np.concatenate(blocks, axis=2) if blocks else None, [b.shape[2] for b in blocks]

    def polynomials(self, coeffs, sizes):
        out, start = [], 0
        for j, s in enumerate(sizes):
            out.append(ArnoldiPolynomial(self.H[j], self.h0[j] or 1.0, coeffs[start:start + s]))
            start += s
        return out


def _build_basis(A, B, degree) -> _Basis:
    Ws, Hs, h0s = [], [], []
    for j in range(B.shape[2]):
        W, H, h0 = krylov_basis(A, B[:, :, j], degree)
        Ws.append(W)
        Hs.append(H)
        h0s.append(h0)
    return _Basis(Ws, Hs, h0s)


def _weighted_lstsq(D, F, w, real):
    K, n, c = D.shape
    s = np.sqrt(w)
    M = (D * s[:, None, None]).reshape(K * n, c)
    rhs = (F * s[:, None]).reshape(-1)
    if real:
        M = np.vstack([M.real, M.imag])
        rhs = np.concatenate([rhs.real, rhs.imag])
        return np.linalg.lstsq(M, rhs, rcond=None)[0].astype(complex)
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _residuals(D, F, coef, vec_norm="2"):
    return vector_norms(np.einsum("knc,c->kn", D, coef) - F, vec_norm)


def _q_error(r, wq, q):
    if not math.isfinite(q):
        return float(np.max(r)) if r.size else 0.0
    return float(np.sum(wq * r ** q) ** (1.0 / q))


def _fit_design(D, F, kind, q, wq, real=False, iterations=LAWSON_ITERATIONS):
    """Returns (coefficients, per-point residuals, lower bound on the optimum)."""
    K = D.shape[0]
    if D.shape[2] == 0:
        return np.zeros(0, dtype=complex), vector_norms(-F), 0.0
    if kind == "lq":
        w = wq.copy()
        best = None
        for _ in range(iterations if q != 2 else 1):
            coef = _weighted_lstsq(D, F, w, real)
            r = _residuals(D, F, coef)
            err = _q_error(r, wq, q)
            if best is None or err < best[2]:
                best = (coef, r, err)
            if q == 2:
                break
            w_new = wq * np.maximum(r, IRLS_FLOOR) ** (q - 2)
            if not np.all(np.isfinite(w_new)) or w_new.sum() == 0:
                break
            w = w_new / w_new.sum()
        return best[0], best[1], None
    # Lawson reweighting toward the discrete minimax fit
    w = np.full(K, 1.0 / K)
    best, lower = None, 0.0
    for _ in range(iterations):
        coef = _weighted_lstsq(D, F, w, real)
        r = _residuals(D, F, coef)
        mx = float(np.max(r))
        wr = math.sqrt(float(np.sum(w * r ** 2)))
        lower = max(lower, wr)
        if best is None or mx < best[2]:
            best = (coef, r, mx)
        if mx == 0 or (mx - wr) / mx < LAWSON_SPREAD:
            break
        w = w * r
        tot = w.sum()
        if tot == 0 or not np.isfinite(tot):
            break
        w = w / tot
    return best[0], best[1], lower


def fit_polynomial(nodes, values, degree, norm="sup", weights=None, real=False):
    """Best polynomial of the given degree on a finite node set.

    Returns ``(ArnoldiPolynomial, residual)`` where the residual is measured
    in the requested norm (max modulus for sup).
    """
    z = np.asarray(nodes, dtype=complex).ravel()
    f = np.asarray(values, dtype=complex).ravel()
    if z.size != f.size:
        raise ValueError("fit_polynomial: nodes and values differ in length")
    if degree < 0 or degree + 1 > z.size:
        raise ValueError(f"fit_polynomial: degree {degree} needs at least {degree + 1} nodes")
    if np.unique(z).size != z.size:
        raise ValueError("fit_polynomial: nodes must be distinct")
    kind, q = parse_norm(norm)
    wq = np.full(z.size, 1.0 / z.size) if weights is None else np.asarray(weights, float)
    A = z[:, None, None]
    W, H, h0 = krylov_basis(A, np.ones((z.size, 1)), degree)
    if W.shape[2] < degree + 1:
        raise ValueError(f"fit_polynomial: degenerate basis at degree {W.shape[2]} "
                         f"(nodes nearly coincident relative to degree {degree})")
    coef, r, _ = _fit_design(W, f[:, None], kind, q, wq, real)
    return ArnoldiPolynomial(H, h0, coef), _q_error(r, wq, q)


# ---------------------------------------------------------------------------
# results


@dataclass
class SynthesisResult:
    polynomials: list
    achieved_sup_error: float
    achieved_q_error: Optional[float]
    degree: int
    error_curve: List[dict] = field(default_factory=list)
    input_plan: Optional[InputPlan] = None
    achieved: bool = True
    epsilon: float = math.nan
    norm: str = "sup"
    lower_bound: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def achieved_error(self) -> float:
        return self.achieved_sup_error if self.norm == "sup" else self.achieved_q_error

    def to_document(self):
        doc = {"achieved": self.achieved, "epsilon": self.epsilon, "norm": self.norm,
               "degree": self.degree, "achieved_sup_error": self.achieved_sup_error,
               "achieved_q_error": self.achieved_q_error, "lower_bound": self.lower_bound,
               "error_curve": self.error_curve,
               "polynomials": [p.to_document() for p in self.polynomials]}
        if self.input_plan is not None:
            doc["input_plan"] = self.input_plan.to_document()
        if self.extras:
            doc["extras"] = self.extras
        return doc

    def error_curve_csv(self) -> str:
        lines = ["degree,sup_error,q_error"]
        for row in self.error_curve:
            qe = row.get("q_error")
            lines.append(f"{row['degree']},{row['sup_error']:.17g},"
                         + ("" if qe is None else f"{qe:.17g}"))
        return "\n".join(lines) + "\n"


def ensemble_errors(ensemble: MatrixEnsemble, polys, F, q=2.0):
    """Independent recomputation: (per-point residuals, sup error, grid q error)."""
    states = apply_polynomials(polys, ensemble.A, ensemble.B)
    r = vector_norms(states - F)
    wq = ensemble.grid.quadrature_weights
    return r, float(np.max(r)) if r.size else 0.0, _q_error(r, wq, q if math.isfinite(q) else 2.0)


def _degree_sweep(max_degree):
    ds = [0]
    d = 1
    while d < max_degree:
        ds.append(d)
        d *= 2
    if max_degree > 0:
        ds.append(max_degree)
    return ds


def _sweep(evaluate, epsilon, max_degree):
    """Doubling then bisection; ``evaluate(d)`` returns (error, payload)."""
    cache = {}

    def ev(d):
        if d not in cache:
            cache[d] = evaluate(d)
        return cache[d]

    prev, hit = -1, None
    for d in _degree_sweep(max_degree):
        if ev(d)[0] < epsilon:
            hit = d
            break
        prev = d
    if hit is not None:
        lo, hi = prev, hit
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ev(mid)[0] < epsilon:
                hi = mid
            else:
                lo = mid
        return hi, cache, True
    best = min(cache, key=lambda d: cache[d][0])
    return best, cache, False


def fit_ensemble(ensemble: MatrixEnsemble, F, degree, norm="sup", real=False, basis=None):
    """One fixed-degree fit of ``sum_j p_j(A) b_j`` to ``F`` (K, n)."""
    kind, q = parse_norm(norm)
    basis = basis or _build_basis(ensemble.A, ensemble.B, degree)
    D, sizes = basis.design(degree)
    wq = ensemble.grid.quadrature_weights
    coef, _, lower = _fit_design(D, np.asarray(F, dtype=complex), kind, q, wq, real)
    polys = basis.polynomials(coef, sizes)
    r, sup, qe = ensemble_errors(ensemble, polys, F, q)
    return polys, sup, qe, lower


def synthesize_uniform(ensemble: MatrixEnsemble, target: TargetEnsemble, epsilon: float,
                       max_degree: int, norm="sup", real=False, horizon: Optional[int] = None,
                       raise_on_failure=True) -> SynthesisResult:
    """Minimal-degree polynomial steering of the whole grid to the target."""
    if epsilon <= 0:
        raise ValueError("synthesize_uniform: epsilon must be positive")
    if max_degree < 0:
        raise ValueError("synthesize_uniform: max_degree must be >= 0")
    target.check(ensemble)
    kind, q = parse_norm(norm)
    F = target.values.copy()
    if target.has_initial:
        if ensemble.time_kind != "discrete" or horizon is None:
            raise ValueError("synthesize_uniform: a nonzero initial state needs discrete time "
                             "and a fixed horizon")
        F = F - _matvec(np.linalg.matrix_power(ensemble.A, horizon), target.initial)
    if horizon is not None:
        if horizon < 1:
            raise ValueError("synthesize_uniform: horizon must be >= 1")
        max_degree = min(max_degree, horizon - 1)
    basis = _build_basis(ensemble.A, ensemble.B, max_degree)
    wq = ensemble.grid.quadrature_weights

    def evaluate(d):
        D, sizes = basis.design(d)
        coef, _, lower = _fit_design(D, F, kind, q, wq, real)
        polys = basis.polynomials(coef, sizes)
        _, sup, qe = ensemble_errors(ensemble, polys, F, q)
        err = sup if kind == "sup" else qe
        return err, (polys, sup, qe, lower)

    d, cache, ok = _sweep(evaluate, epsilon, max_degree)
    curve = [{"degree": k, "sup_error": cache[k][1][1], "q_error": cache[k][1][2]}
             for k in sorted(cache)]
    polys, sup, qe, lower = cache[d][1]
    res = SynthesisResult(polys, sup, qe, d, curve, None, ok, float(epsilon),
                          _norm_label(kind, q), lower)
    _attach_plan(ensemble, res, horizon)
    if not ok and raise_on_failure:
        raise NotAchievedError(f"not achieved within max_degree {max_degree}: best "
                               f"{_norm_label(kind, q)} error {res.achieved_error:.6g} "
                               f"at degree {d}", res)
    return res


# ---------------------------------------------------------------------------
# structured synthesis (constant upper characteristic coefficients)


def synthesize_structured(form: CanonicalForm, ensemble: MatrixEnsemble, target: TargetEnsemble,
                          epsilon: float, max_degree: int, tol: Optional[float] = None,
                          inj_tol: Optional[float] = None, raise_on_failure=True
                          ) -> SynthesisResult:
    """Fit n scalar polynomials on the nodes ``a_0(theta)`` and assemble
    ``p(z) = sum_k p_k(g(z)) z^{k-1}`` with ``g(z) = z^n - a_{n-1} z^{n-1} - ... - a_1 z``."""
    n = ensemble.n
    if ensemble.m != 1:
        raise ValueError("synthesize_structured: single-input ensemble required")
    target.check(ensemble)
    coeffs = form.char_coeffs
    tol = 1e-6 * (1 + float(np.max(np.abs(coeffs)))) if tol is None else tol
    spread = form.coefficient_spread()
    for k in range(1, n):
        if spread[k] > tol:
            raise ValueError(f"synthesize_structured: coefficient a_{k} varies across the grid "
                             f"(spread {spread[k]:.3g} > {tol:.3g})")
    a0 = coeffs[:, 0]
    itol = inj_tol if inj_tol is not None else 1e-6 * max(float(np.ptp(np.abs(a0))), 1e-300)
    labels = cluster_radius(a0, itol)
    if np.unique(labels).size < a0.size:
        raise ValueError("synthesize_structured: a_0 is not injective on the grid")
    consts = coeffs.mean(axis=0)
    g = np.zeros(n + 1, dtype=complex)
    g[n] = 1
    g[1:n] = -consts[1:n]
    # target in controllability coordinates: f = R xi, p(A) b = R (p_k(a_0))_k
    xi = np.linalg.solve(form.T_curves, target.values[:, :, None])[:, :, 0]
    max_part = max((max_degree - (n - 1)) // max(n, 1), 0)
    max_part = min(max_part, a0.size - 1)
    wq = ensemble.grid.quadrature_weights
    Wb, Hb, h0 = krylov_basis(a0[:, None, None], np.ones((a0.size, 1)), max_part)

    def evaluate(d):
        d = min(d, Wb.shape[2] - 1)
        parts = []
        for k in range(n):
            coef, _, _ = _fit_design(Wb[:, :, :d + 1], xi[:, k:k + 1], "sup", math.inf, wq)
            parts.append(ArnoldiPolynomial(Hb, h0, coef))
        poly = StructuredPolynomial(parts, g)
        _, sup, qe = ensemble_errors(ensemble, [poly], target.values)
        return sup, (poly, sup, qe)

    d, cache, ok = _sweep(evaluate, epsilon, max_part)
    curve = [{"degree": cache[k][1][0].degree, "sup_error": cache[k][1][1],
              "q_error": cache[k][1][2]} for k in sorted(cache)]
    poly, sup, qe = cache[d][1]
    res = SynthesisResult([poly], sup, qe, poly.degree, curve, None, ok, float(epsilon), "sup",
                          extras={"part_degree": d, "g": [[c.real, c.imag] for c in g]})
    if not ok and raise_on_failure:
        raise NotAchievedError(f"not achieved within max_degree {max_degree}: best sup error "
                               f"{sup:.6g}", res)
    return res


# ---------------------------------------------------------------------------
# indicator polynomials and parallel combination


def _cloud_gap(a, b) -> float:
    pa = np.column_stack([a.real, a.imag])
    pb = np.column_stack([b.real, b.imag])
    return float(cKDTree(pb).query(pa)[0].min())


def _shell(cloud, radius, directions=8):
    ang = np.exp(2j * np.pi * np.arange(directions) / directions)
    pts = np.concatenate([cloud, (cloud[:, None] + radius * ang[None, :]).ravel()])
    h = radius / 4
    key = np.round(np.column_stack([pts.real, pts.imag]) / h).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(idx)]


def indicator_polynomials(clouds: Sequence, epsilon: float, max_degree: int,
                          resolution: int = 256, shell_fraction: float = 0.1,
                          raise_on_failure=True):
    """Polynomials ``q_i`` close to 1 near cloud i and to 0 near the others.

    Clouds dilated by gap/3 must not separate the plane. The fit itself runs on
    every cloud plus a ring of radius ``shell_fraction * gap`` around each
    sample, so ``q_i`` is also controlled in a neighbourhood (needed for
    non-normal blocks). Thicker rings bring the sets closer together and the
    achievable rate drops sharply. Returns ``(polynomials, residuals)``.
    """
    clouds = [np.asarray(c, dtype=complex).ravel() for c in clouds]
    if any(c.size == 0 for c in clouds):
        raise ValueError("indicator_polynomials: empty cloud")
    k = len(clouds)
    if k == 1:
        return [MonomialPolynomial([1.0])], [0.0]
    gap = min(_cloud_gap(clouds[i], clouds[j]) for i in range(k) for j in range(i + 1, k))
    if gap <= 0:
        raise ValueError("indicator_polynomials: clouds are not separated (gap 0)")
    dil = gap / 3
    for i, c in enumerate(clouds):
        if not is_nonseparating(c, dil, resolution):
            raise ValueError(f"indicator_polynomials: cloud {i} separates the plane "
                             f"at dilation {dil:.3g}")
    union = np.concatenate(clouds)
    if not is_nonseparating(union, dil, resolution):
        raise ValueError("indicator_polynomials: clouds jointly separate the plane")
    if not 0 <= shell_fraction < 0.5:
        raise ValueError("indicator_polynomials: shell_fraction must lie in [0, 0.5)")
    shells = [_shell(c, shell_fraction * gap) if shell_fraction > 0 else np.unique(c)
              for c in clouds]
    nodes = np.concatenate(shells)
    # rings of different clouds stay at least (1 - 2 shell_fraction) gap apart
    owner = np.concatenate([np.full(s.size, i) for i, s in enumerate(shells)])
    max_degree = min(max_degree, nodes.size - 1)
    W, H, h0 = krylov_basis(nodes[:, None, None], np.ones((nodes.size, 1)), max_degree)
    wq = np.full(nodes.size, 1.0 / nodes.size)
    polys, res = [], []
    for i in range(k):
        vals = (owner == i).astype(complex)[:, None]

        def evaluate(d):
            d = min(d, W.shape[2] - 1)
            coef, r, _ = _fit_design(W[:, :, :d + 1], vals, "sup", math.inf, wq)
            return float(np.max(r)), ArnoldiPolynomial(H, h0, coef)

        d, cache, ok = _sweep(evaluate, epsilon, max_degree)
        if not ok and raise_on_failure:
            raise NotAchievedError(f"indicator {i}: not achieved within max_degree "
                                   f"{max_degree} (best {cache[d][0]:.3g})")
        polys.append(cache[d][1])
        res.append(cache[d][0])
    return polys, res


def combine_parallel(subresults: Sequence[SynthesisResult], indicators: Sequence,
                     ensemble: MatrixEnsemble, target: TargetEnsemble,
                     epsilon: float = math.inf) -> SynthesisResult:
    """``p = sum_i q_i p_i`` applied to the composed single-input ensemble."""
    if len(subresults) != len(indicators):
        raise ValueError("combine_parallel: need one indicator per block result")
    if ensemble.m != 1 or any(len(r.polynomials) != 1 for r in subresults):
        raise ValueError("combine_parallel: single-input blocks required")
    poly = CombinedPolynomial([(q, r.polynomials[0]) for q, r in zip(indicators, subresults)])
    if poly.degree > MAX_COMBINED_DEGREE:
        raise ValueError(f"combine_parallel: combined degree {poly.degree} exceeds "
                         f"{MAX_COMBINED_DEGREE}; evaluation would be unstable")
    target.check(ensemble)
    _, sup, qe = ensemble_errors(ensemble, [poly], target.values)
    return SynthesisResult([poly], sup, qe, poly.degree, [], None, sup < epsilon,
                           float(epsilon), "sup",
                           extras={"block_errors": [r.achieved_sup_error for r in subresults]})


@dataclass(frozen=True)
class CombinationBound:
    k_constant: float
    alpha1: float
    alpha2: float
    alpha3: float
    beta1: float
    L_gamma: float
    c: float = 1.0


def estimate_combination_constant(A1, b1, p1, p2, center, radius, nodes=64) -> CombinationBound:
    """Error-amplification constant for a two-block combination on a circle contour."""
    A1 = np.asarray(A1, dtype=complex)
    b1 = np.asarray(b1, dtype=complex)
    if A1.ndim == 2:
        A1 = A1[None]
    if b1.ndim == 1:
        b1 = b1[None]
    K, n, _ = A1.shape
    eig = np.linalg.eigvals(A1).ravel()
    dist = np.abs(eig - center)
    if np.any(dist >= radius - 1e-9):
        raise ValueError("estimate_combination_constant: contour does not strictly enclose "
                         "the block spectrum")
    z = center + radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    eye = np.eye(n)
    smin = min(np.linalg.svd(zz * eye - A1, compute_uv=False)[:, -1].min() for zz in z)
    alpha1 = 1.0 / smin
    alpha2 = float(np.max(np.abs(p2(z))))
    cols = np.stack([p1.apply(A1, np.broadcast_to(eye[:, j], (K, n)).astype(complex))
                     for j in range(n)], axis=2)
    alpha3 = float(np.max(np.linalg.norm(cols, ord=2, axis=(1, 2))))
    beta1 = float(np.max(np.linalg.norm(b1, axis=-1)))
    L = 2 * np.pi * radius
    c = 1.0
    k = c * c * (L / (2 * np.pi)) * alpha1 * alpha3 * beta1 + 1 + c * (L / (2 * np.pi)) * alpha1 * alpha2 * beta1
    return CombinationBound(float(k), alpha1, alpha2, alpha3, beta1, L, c)


# ---------------------------------------------------------------------------
# discrete time: inputs, simulation, cascades


def inputs_from_polynomials(polys, T: Optional[int] = None) -> InputPlan:
    """``u_{T-1-k, j}`` is the k-th monomial coefficient of ``p_j``."""
    mono = [p.to_monomial() for p in polys]
    deg = max((p.degree for p in mono), default=0)
    T = deg + 1 if T is None else int(T)
    if T < deg + 1:
        raise ValueError(f"inputs_from_polynomials: horizon {T} < degree + 1 = {deg + 1}")
    u = np.zeros((T, max(len(mono), 1)), dtype=complex)
    for j, p in enumerate(mono):
        u[T - 1 - np.arange(p.coeffs.size), j] = p.coeffs
    return InputPlan(u)


@dataclass(frozen=True, eq=False)
class Simulation:
    states: np.ndarray                 # (K, n) final states
    errors: Optional[np.ndarray]       # (K,) per-point error vs target
    sup_error: Optional[float]


def simulate_discrete(ensemble: MatrixEnsemble, plan: InputPlan, initial=None,
                      target: Optional[TargetEnsemble] = None) -> Simulation:
    """``x_{t+1} = A x_t + B u_t`` on every grid point."""
    u = plan.inputs
    if u.shape[1] != ensemble.m:
        raise ValueError(f"simulate_discrete: plan has {u.shape[1]} inputs, ensemble {ensemble.m}")
    x = np.zeros((ensemble.K, ensemble.n), dtype=complex)
    if initial is not None:
        x = x + np.asarray(initial, dtype=complex)
    elif target is not None:
        x = x + target.initial
    for t in range(u.shape[0]):
        x = _matvec(ensemble.A, x) + np.einsum("knm,m->kn", ensemble.B, u[t])
    if target is None:
        return Simulation(x, None, None)
    err = vector_norms(x - target.values)
    return Simulation(x, err, float(np.max(err)) if err.size else 0.0)


def _pad_front(u, T):
    return np.vstack([np.zeros((T - u.shape[0], u.shape[1]), dtype=complex), u])


def cascade_synthesize(ensemble: MatrixEnsemble, target: TargetEnsemble, epsilon: float,
                       max_degree: int, split: Optional[tuple] = None, norm="sup"
                       ) -> InputPlan:
    """Two-stage synthesis for block upper-triangular discrete-time pairs.

    ``split = (n1, m1)`` gives the size of the first state block and of its
    input group (default: halves). The second block is steered first; its
    effect on block 1 is then simulated exactly and subtracted.
    """
    if ensemble.time_kind != "discrete":
        raise ValueError("cascade_synthesize: discrete-time ensemble required")
    n, m = ensemble.n, ensemble.m
    n1, m1 = split if split is not None else (n // 2, m // 2)
    if not (0 < n1 < n and 0 < m1 < m):
        raise ValueError(f"cascade_synthesize: invalid block split ({n1}, {m1})")
    A, B = ensemble.A, ensemble.B
    scale = max(1.0, float(np.max(np.abs(A))), float(np.max(np.abs(B))))
    if np.max(np.abs(A[:, n1:, :n1])) > 1e-12 * scale:
        raise ValueError("cascade_synthesize: A is not block upper-triangular (A21 != 0)")
    if np.max(np.abs(B[:, n1:, :m1])) > 1e-12 * scale:
        raise ValueError("cascade_synthesize: B is not block upper-triangular (B21 != 0)")
    target.check(ensemble)
    grid, tk = ensemble.grid, ensemble.time_kind
    F = target.values
    e2 = MatrixEnsemble.from_arrays(grid, A[:, n1:, n1:], B[:, n1:, m1:], time_kind=tk)
    try:
        r2 = synthesize_uniform(e2, TargetEnsemble(F[:, n1:]), epsilon, max_degree, norm)
    except NotAchievedError as exc:
        raise NotAchievedError(f"cascade stage 1 (block 2): {exc}", exc.result) from None
    u2 = (r2.input_plan or inputs_from_polynomials(r2.polynomials)).inputs
    probe = np.zeros((u2.shape[0], m), dtype=complex)
    probe[:, m1:] = u2
    psi = simulate_discrete(ensemble, InputPlan(probe)).states[:, :n1]
    e1 = MatrixEnsemble.from_arrays(grid, A[:, :n1, :n1], B[:, :n1, :m1], time_kind=tk)
    try:
        r1 = synthesize_uniform(e1, TargetEnsemble(F[:, :n1] - psi), epsilon, max_degree, norm)
    except NotAchievedError as exc:
        raise NotAchievedError(f"cascade stage 2 (block 1): {exc}", exc.result) from None
    u1 = (r1.input_plan or inputs_from_polynomials(r1.polynomials)).inputs
    T = max(u1.shape[0], u2.shape[0])
    u = np.hstack([_pad_front(u1, T), _pad_front(u2, T)])
    plan = InputPlan(u)
    sim = simulate_discrete(ensemble, plan, target=TargetEnsemble(F))
    if sim.sup_error >= 2 * epsilon:
        raise NotAchievedError(f"cascade: simulated error {sim.sup_error:.3g} >= 2 epsilon")
    return plan


# ---------------------------------------------------------------------------
# average output steering


def _averaged_output(ensemble, states):
    w = ensemble.grid.quadrature_weights
    return np.einsum("k,kpn,kn->p", w, ensemble.C, states)


def steer_average(ensemble: MatrixEnsemble, y_star, epsilon: float, max_degree: int,
                  route: str = "auto") -> SynthesisResult:
    """Place the quadrature average of ``C x`` at ``y_star``.

    The direct route solves the moment system for minimum-norm coefficients;
    the constructive route concentrates a hat bump at a point where ``C``
    has full row rank and shrinks it until the averaged output is close.
    """
    from .certify import output_moment_rank
    if ensemble.C is None:
        raise ValueError("steer_average: ensemble has no output matrix C")
    y = np.asarray(y_star, dtype=complex).ravel()
    p = ensemble.p
    if y.size != p:
        raise ValueError(f"steer_average: y_star has {y.size} entries, expected {p}")
    if route not in ("auto", "direct", "constructive"):
        raise ValueError(f"steer_average: unknown route {route!r}")
    mm = output_moment_rank(ensemble)
    full = [i for i in range(ensemble.K)
            if p and np.linalg.matrix_rank(ensemble.C[i]) == p]
    if mm.verdict != "pass" and not full:
        raise ValueError(f"steer_average: output not reachable on average "
                         f"(moment rank {mm.rank} < p = {p}, rank C < p everywhere)")
    w = ensemble.grid.quadrature_weights
    if route in ("auto", "direct") and mm.verdict == "pass":
        basis = _build_basis(ensemble.A, ensemble.B, max_degree)
        res = None
        for d in _degree_sweep(max_degree):
            D, sizes = basis.design(d)
            M = np.einsum("k,kpn,knc->pc", w, ensemble.C, D)
            coef = np.linalg.lstsq(M, y, rcond=None)[0]
            polys = basis.polynomials(coef, sizes)
            states = apply_polynomials(polys, ensemble.A, ensemble.B)
            err = float(np.linalg.norm(_averaged_output(ensemble, states) - y))
            if err < epsilon:
                res = SynthesisResult(polys, err, None, d, [], None, True, float(epsilon), "sup",
                                      extras={"route": "direct", "output_error": err})
                break
        if res is not None:
            _attach_plan(ensemble, res)
            return res
        if route == "direct":
            raise NotAchievedError("steer_average: direct route not achieved within max_degree")
    if not full:
        raise NotAchievedError("steer_average: no grid point with rank C = p for the "
                               "constructive route")
    i_star = max(full, key=lambda i: np.linalg.svd(ensemble.C[i], compute_uv=False)[-1])
    f_star = np.linalg.pinv(ensemble.C[i_star]) @ y
    th = ensemble.points
    r = float(np.max(np.abs(th - th[i_star])))
    # |avg C (x - F)| <= max|C| sqrt(sum w) ||x - F||_l2, so an l2 fit suffices
    c_max = float(np.max(np.linalg.norm(ensemble.C, ord=2, axis=(1, 2))))
    eps_state = epsilon / (2 * max(c_max, 1e-300) * math.sqrt(float(np.sum(w))))
    for _ in range(20):
        g = np.maximum(0.0, 1 - np.abs(th - th[i_star]) / r)
        mass = float(np.sum(w * g))
        F = (g / mass)[:, None] * f_star[None, :]
        bump_err = float(np.linalg.norm(_averaged_output(ensemble, F) - y))
        if bump_err < epsilon / 2:
            sr = synthesize_uniform(ensemble, TargetEnsemble(F), eps_state, max_degree, "l2",
                                    raise_on_failure=False)
            states = apply_polynomials(sr.polynomials, ensemble.A, ensemble.B)
            err = float(np.linalg.norm(_averaged_output(ensemble, states) - y))
            sr.extras.update(route="constructive", output_error=err, radius=r,
                             theta_star=[float(th[i_star].real), float(th[i_star].imag)])
            if err < epsilon:
                sr.achieved = True
                return sr
            break
        r /= 2
    raise NotAchievedError("steer_average: both routes failed within budget")


def _attach_plan(ensemble, res, horizon=None):
    """Discrete-time results carry their input sequence while monomials are trustworthy."""
    if ensemble.time_kind != "discrete" or not res.polynomials:
        return
    deg = max(p.degree for p in res.polynomials)
    if deg > MONOMIAL_WARN_DEGREE:
        res.extras["input_plan"] = (f"omitted at degree {deg}; call inputs_from_polynomials "
                                    "explicitly")
        return
    res.input_plan = inputs_from_polynomials(res.polynomials, horizon)
