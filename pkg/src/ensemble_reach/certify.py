"""Grid-resolution certification of uniform, L^q and output ensemble reachability.

Every check returns a three-valued verdict: "pass", "fail" or "inconclusive".
Sufficient routes (tried in order, all recorded):

R1  scalar pair: b nonzero and a injective
R2  single input, characteristic coefficients a_1..a_{n-1} constant, a_0 injective
R3  single input, strictly disjoint spectral grouping with non-separating
    clouds, every block passing R2
R4  single input on an arc: simple eigenvalues plus cross-parameter disjointness
R5  multi-input, constant Hermite indices, every diagonal subpair certified
R6  upper triangular A and B, rank B = n, diagonal entries of A injective
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import kernels
from ._util import default_rank_tol, numerical_rank, rank_ratio, singular_values
from .canonical import UnreachableError, controllability_form, hermite_form, kalman_matrix
from .model import MatrixEnsemble
from .spectral import (SpectralError, SpectralFamily, curve_dilation, decompose, eigen_curves,
                       group_selections, is_nonseparating, projection_residuals)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass(frozen=True)
class Tolerances:
    """User-facing tolerances; ``None`` means "use the scale-aware default"."""
    rank: Optional[float] = None       # relative singular-value threshold (default 1e-9 n)
    spec: Optional[float] = None       # eigenvalue cluster radius (default 1e-6 x spectral diameter)
    measure: float = 0.0               # admissible quadrature weight of exceptional sets
    coeff: Optional[float] = None      # constancy of char. coefficients (default 1e-6 (1 + scale))
    allow_isolated: bool = False
    resolution: int = 256
    quadrature_nodes: int = 64

    def rank_tol(self, n) -> float:
        return default_rank_tol(n) if self.rank is None else float(self.rank)

    def spec_tol(self, values) -> float:
        if self.spec is not None:
            return float(self.spec)
        return 1e-6 * _diameter(values) if _diameter(values) > 0 else 1e-6

    def coeff_tol(self, values) -> float:
        if self.coeff is not None:
            return float(self.coeff)
        v = np.asarray(values)
        return 1e-6 * (1 + (float(np.max(np.abs(v))) if v.size else 0.0))

    def resolved(self, ensemble: MatrixEnsemble, family: Optional[SpectralFamily] = None) -> dict:
        fam = family if family is not None else eigen_curves(ensemble)
        return {"rank": self.rank_tol(ensemble.n), "spec": self.spec_tol(fam.curves.ravel()),
                "measure": float(self.measure), "allow_isolated": bool(self.allow_isolated),
                "coeff": self.coeff, "resolution": int(self.resolution),
                "quadrature_nodes": int(self.quadrature_nodes)}


def _diameter(values) -> float:
    z = np.asarray(values, dtype=complex).ravel()
    if z.size < 2:
        return 0.0
    if z.size <= 2000:
        return float(np.max(np.abs(z[:, None] - z[None, :])))
    return float(np.hypot(np.ptp(z.real), np.ptp(z.imag)))


@dataclass
class Condition:
    name: str
    kind: str              # necessary | sufficient | iff
    verdict: str
    witness: dict = field(default_factory=dict)
    tolerance: Optional[float] = None

    def to_document(self):
        return {"name": self.name, "kind": self.kind, "verdict": self.verdict,
                "witness": _jsonable(self.witness), "tolerance": self.tolerance}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _combine(verdicts) -> str:
    verdicts = list(verdicts)
    if any(v == FAIL for v in verdicts):
        return FAIL
    if any(v == INCONCLUSIVE for v in verdicts):
        return INCONCLUSIVE
    return PASS


@dataclass
class CertificationReport:
    conditions: List[Condition]
    overall_necessary: str
    overall_sufficient: str
    route: Optional[str] = None
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.overall_sufficient == PASS and self.overall_necessary != PASS:
            raise AssertionError("sufficient route certified a pair failing a necessary test")

    @property
    def verdict(self) -> str:
        if self.overall_sufficient == PASS:
            return PASS
        if self.overall_necessary == FAIL:
            return FAIL
        return INCONCLUSIVE

    def condition(self, name) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_document(self):
        return {"conditions": [c.to_document() for c in self.conditions],
                "overall_necessary": self.overall_necessary,
                "overall_sufficient": self.overall_sufficient,
                "route": self.route, "verdict": self.verdict,
                "tolerances": _jsonable(self.tolerances)}


def _theta(ensemble, idx):
    return [[float(ensemble.points[i].real), float(ensemble.points[i].imag)] for i in idx]


def _weight(ensemble, idx) -> float:
    w = ensemble.grid.quadrature_weights
    return float(np.sum(w[list(idx)])) if len(idx) else 0.0


def _isolated(ensemble, idx) -> bool:
    """No two indices adjacent in grid order (circles wrap). Unordered grids never qualify."""
    if not ensemble.grid.ordered:
        return False
    s = set(int(i) for i in idx)
    K = ensemble.K
    for i in s:
        if i + 1 in s:
            return False
        if ensemble.grid.topology == "circle" and i == K - 1 and 0 in s and K > 2:
            return False
    return True


# ---------------------------------------------------------------------------
# individual checks


def _pointwise_reachability(ensemble, tol):
    bad, ratios = [], []
    for i in range(ensemble.K):
        r = rank_ratio(kalman_matrix(ensemble.A[i], ensemble.B[i]), ensemble.n)
        ratios.append(r)
        if ensemble.n and r <= tol:
            bad.append(i)
    return bad, (min(ratios) if ratios else 1.0)


def _check_a(ensemble, tol) -> Condition:
    bad, worst = _pointwise_reachability(ensemble, tol)
    wit = {"min_sigma_ratio": worst}
    if bad:
        wit.update(indices=bad[:20], theta=_theta(ensemble, bad[:20]), count=len(bad))
    return Condition("a_pointwise_reachable", "necessary", FAIL if bad else PASS, wit, tol)


def _check_b(ensemble, fam) -> Condition:
    bad = sorted(set(np.nonzero(np.any(fam.geometric_mults > 1, axis=1))[0].tolist()))
    wit = {}
    if bad:
        wit = {"indices": bad[:20], "theta": _theta(ensemble, bad[:20]),
               "geometric_multiplicity": int(fam.geometric_mults[bad[0]].max())}
    return Condition("b_geometric_multiplicity_one", "necessary", FAIL if bad else PASS, wit, None)


def _eigen_clusters(fam: SpectralFamily, tol):
    """Yield (label, parameter indices, eigenvalue samples) for every cluster."""
    K = fam.K
    flat = fam.curves.ravel()
    labels = kernels.cluster_radius(flat, tol)
    params = np.tile(np.arange(K), fam.n)
    order = np.argsort(labels, kind="stable")
    bounds = np.nonzero(np.diff(labels[order]))[0] + 1
    for chunk in np.split(order, bounds):
        if chunk.size:
            yield sorted(set(params[chunk].tolist())), flat[chunk]


def _check_c(ensemble, fam, tol, limit) -> Condition:
    """Clusters of eigenvalue samples may contain at most ``limit`` distinct parameters."""
    name = "c_cross_parameter_disjoint" if limit == 1 else "b_multi_intersection"
    worst = None
    n_bad = 0
    for params, vals in _eigen_clusters(fam, tol):
        if len(params) > limit:
            n_bad += 1
            if worst is None or len(params) > len(worst[0]):
                worst = (params, vals)
    wit = {"limit": limit}
    if worst is not None:
        wit.update(eigenvalue=complex(np.mean(worst[1])), parameters=worst[0][:20],
                   theta=_theta(ensemble, worst[0][:20]), clusters=n_bad)
    return Condition(name, "necessary", FAIL if worst is not None else PASS, wit, tol)


def _check_hautus_shared(ensemble, fam, tol_spec, tol_rank) -> Condition:
    """Hautus test on the parallel connection over parameters sharing an eigenvalue."""
    n, m = ensemble.n, ensemble.m
    worst = None
    for params, vals in _eigen_clusters(fam, tol_spec):
        s = len(params)
        if s < 2 or s > m:
            continue
        lam = complex(np.mean(vals))
        spread = float(np.max(np.abs(vals - lam)))
        M = np.zeros((n * s, n * s + m), dtype=complex)
        for k, i in enumerate(params):
            M[k * n:(k + 1) * n, k * n:(k + 1) * n] = lam * np.eye(n) - ensemble.A[i]
            M[k * n:(k + 1) * n, n * s:] = ensemble.B[i]
        sv = singular_values(M)
        if sv[n * s - 1] <= tol_rank * sv[0] + spread:
            worst = {"eigenvalue": lam, "parameters": params, "theta": _theta(ensemble, params),
                     "sigma_min": float(sv[n * s - 1])}
            break
    return Condition("hautus_shared_eigenvalues", "necessary", FAIL if worst else PASS,
                     worst or {}, tol_rank)


def _check_d(ensemble, fam) -> Condition:
    g = ensemble.grid
    # a restricted grid samples an arbitrary subset of P, where density has no meaning
    applicable = (g.ordered and ensemble.K >= 2 and g.contractible and g.locally_connected
                  and not g.meta.get("restricted", False))
    degenerate = np.nonzero(np.any(fam.multiplicities > 1, axis=1))[0].tolist()
    frac = len(degenerate) / max(ensemble.K, 1)
    wit = {"applicable": applicable, "degenerate_fraction": frac}
    if degenerate:
        wit.update(indices=degenerate[:20], theta=_theta(ensemble, degenerate[:20]))
    if not applicable:
        return Condition("d_generic_simple_spectrum", "necessary", PASS, wit, 0.0)
    ok = _isolated(ensemble, degenerate)
    return Condition("d_generic_simple_spectrum", "necessary", PASS if ok else FAIL, wit, 0.0)


def _check_e(ensemble) -> Condition:
    g = ensemble.grid
    if g.topology != "explicit":
        return Condition("e_no_interior", "necessary", PASS,
                         {"reason": f"{g.topology} grids are one-dimensional"}, None)
    pts = g.points
    if g.K < 16:
        return Condition("e_no_interior", "necessary", PASS, {"reason": "finite point set"}, None)
    xy = np.column_stack([pts.real, pts.imag])
    try:
        area = ConvexHull(xy).volume
    except QhullError:
        area = 0.0
    if area <= 0:
        return Condition("e_no_interior", "necessary", PASS, {"reason": "collinear points"}, None)
    d, _ = cKDTree(xy).query(xy, k=2)
    h = float(np.median(d[:, 1]))
    fill = g.K * h * h / area
    wit = {"hull_area": area, "fill_ratio": fill}
    if fill >= 0.25:
        wit["reason"] = "points fill a planar region; the sampled set may have interior"
        return Condition("e_no_interior", "necessary", INCONCLUSIVE, wit, 0.25)
    return Condition("e_no_interior", "necessary", PASS, wit, 0.25)


def _necessary_conditions(ensemble, tols: Tolerances, fam=None):
    fam = fam if fam is not None else eigen_curves(ensemble)
    rt = tols.rank_tol(ensemble.n)
    st = tols.spec_tol(fam.curves.ravel())
    conds = [_check_a(ensemble, rt)]
    if ensemble.m <= 1:
        conds += [_check_b(ensemble, fam), _check_c(ensemble, fam, st, 1), _check_d(ensemble, fam)]
    else:
        conds += [_check_c(ensemble, fam, st, ensemble.m), _check_hautus_shared(ensemble, fam, st, rt)]
    conds.append(_check_e(ensemble))
    return conds, fam


def certify_uniform_necessary(ensemble: MatrixEnsemble, tols: Optional[Tolerances] = None
                              ) -> CertificationReport:
    tols = tols or Tolerances()
    conds, fam = _necessary_conditions(ensemble, tols)
    nec = _combine(c.verdict for c in conds)
    return CertificationReport(conds, nec, INCONCLUSIVE if nec != FAIL else FAIL, None,
                               tols.resolved(ensemble, fam))


# ---------------------------------------------------------------------------
# scalar and routes


def _injective(values, tol):
    """Indices involved in collisions (clusters with more than one grid point)."""
    labels = kernels.cluster_radius(np.asarray(values, dtype=complex), tol)
    counts = np.bincount(labels)
    return np.nonzero(counts[labels] > 1)[0].tolist()


def _value_tol(tols, values):
    return tols.spec_tol(values)


def _route_contractible(ensemble) -> bool:
    g = ensemble.grid
    return g.topology == "explicit" or g.contractible


def certify_scalar(ensemble: MatrixEnsemble, tols: Optional[Tolerances] = None) -> CertificationReport:
    """Scalar pairs: reachable iff b never vanishes and a is injective (contractible P)."""
    if ensemble.n != 1:
        raise ValueError(f"certify_scalar: n must be 1 (got {ensemble.n})")
    tols = tols or Tolerances()
    cond = _scalar_condition(ensemble, tols)
    nec = cond.verdict if cond.verdict == FAIL else PASS
    if cond.verdict == PASS and not _route_contractible(ensemble):
        cond.verdict = INCONCLUSIVE
        cond.witness["reason"] = "grid not declared contractible"
    suff = cond.verdict if nec == PASS else FAIL
    return CertificationReport([cond], nec, suff, "R1" if suff == PASS else None,
                               tols.resolved(ensemble))


def _scalar_condition(ensemble, tols) -> Condition:
    a = ensemble.A[:, 0, 0]
    b = ensemble.B[:, 0, :]
    bn = np.linalg.norm(b, axis=1)
    rt = tols.rank_tol(1)
    scale = float(np.max(bn)) if bn.size else 0.0
    zero = np.nonzero(bn <= rt * scale)[0].tolist() if scale > 0 else list(range(ensemble.K))
    st = _value_tol(tols, a)
    coll = _injective(a, st)
    wit = {}
    if zero:
        wit["b_vanishes"] = {"indices": zero[:20], "theta": _theta(ensemble, zero[:20])}
    if coll:
        wit["collisions"] = {"indices": coll[:20], "theta": _theta(ensemble, coll[:20])}
    verdict = FAIL if (zero or coll) else PASS
    return Condition("R1_scalar", "iff", verdict, wit, st)


def _route_r2(ensemble, tols, name="R2_constant_coefficients"):
    if ensemble.m != 1:
        return Condition(name, "sufficient", FAIL, {"reason": "not single-input"})
    if not _route_contractible(ensemble):
        return Condition(name, "sufficient", FAIL, {"reason": "grid not declared contractible"})
    try:
        cf = controllability_form(ensemble, tols.rank_tol(ensemble.n))
    except UnreachableError as exc:
        return Condition(name, "sufficient", FAIL, {"reason": str(exc), "indices": exc.indices[:20]})
    n = ensemble.n
    if n == 0:
        return Condition(name, "sufficient", PASS, {})
    spread = cf.coefficient_spread()
    ctol = tols.coeff_tol(cf.char_coeffs)
    varying = [k for k in range(1, n) if spread[k] > ctol]
    wit = {"coefficient_spread": spread.tolist(), "cond_max": cf.cond_max}
    if varying:
        wit["reason"] = f"a_{varying[0]} varies across the grid"
        wit["varying"] = varying
        return Condition(name, "sufficient", FAIL, wit, ctol)
    a0 = cf.char_coeffs[:, 0]
    coll = _injective(a0, _value_tol(tols, a0))
    if coll:
        wit["reason"] = "a_0 is not injective on the grid"
        wit["collisions"] = coll[:20]
        return Condition(name, "sufficient", FAIL, wit, ctol)
    return Condition(name, "sufficient", PASS, wit, ctol)


def _route_r3(ensemble, tols, fam, spec_tol):
    name = "R3_spectral_decomposition"
    if ensemble.m != 1:
        return Condition(name, "sufficient", FAIL, {"reason": "not single-input"}), None
    if not _route_contractible(ensemble):
        return Condition(name, "sufficient", FAIL, {"reason": "grid not declared contractible"}), None
    grp = group_selections(fam, spec_tol)
    wit = {"groups": grp.groups, "min_gap": grp.min_gap() if grp.k > 1 else None}
    if grp.k < 2:
        wit["reason"] = "no nontrivial strictly disjoint grouping"
        return Condition(name, "sufficient", FAIL, wit, spec_tol), None
    explicit = ensemble.grid.topology == "explicit"
    closed = ensemble.grid.topology == "circle"
    nonsep = []
    for gi in range(grp.k):
        if explicit:
            nonsep.append(True)
            continue
        gap = float(np.min(np.delete(grp.gaps[gi], gi)))
        d = curve_dilation(fam.curves[grp.groups[gi]], gap, closed)
        nonsep.append(is_nonseparating(grp.cloud(gi), d, tols.resolution))
    wit["nonseparating"] = nonsep
    if not all(nonsep):
        wit["reason"] = "a group's spectral cloud separates the plane"
        return Condition(name, "sufficient", FAIL, wit, spec_tol), None
    dec = subs = None
    last = None
    for nodes in sorted({tols.quadrature_nodes, 128, 256, 512}):
        if nodes < tols.quadrature_nodes:
            continue
        try:
            dec, subs = decompose(ensemble, grp, nodes)
        except SpectralError as exc:
            last = str(exc)
            dec = None
            break
        res = projection_residuals(ensemble, dec)
        wit["projection_residuals"] = res
        wit["quadrature_nodes"] = nodes
        if max(res.values()) < 1e-7:
            break
    if dec is None:
        wit["reason"] = last
        return Condition(name, "sufficient", FAIL, wit, spec_tol), None
    blocks = []
    ok = True
    for sub in subs:
        c = _route_r2(sub, tols, "block")
        blocks.append({"n": sub.n, "verdict": c.verdict, "reason": c.witness.get("reason")})
        ok = ok and c.verdict == PASS
    wit["blocks"] = blocks
    if not ok:
        wit["reason"] = "a block fails the constant-coefficient route"
    return Condition(name, "sufficient", PASS if ok else FAIL, wit, spec_tol), (grp, dec, subs)


def _route_r4(ensemble, fam, nec_by_name):
    name = "R4_arc_simple_spectrum"
    g = ensemble.grid
    if ensemble.m != 1:
        return Condition(name, "sufficient", FAIL, {"reason": "not single-input"})
    if g.topology not in ("interval", "curve") or not g.contractible:
        return Condition(name, "sufficient", FAIL, {"reason": "grid not declared an arc"})
    wit = {}
    if nec_by_name["a_pointwise_reachable"].verdict != PASS:
        wit["reason"] = "pointwise reachability fails"
    elif nec_by_name["c_cross_parameter_disjoint"].verdict != PASS:
        wit["reason"] = "spectra intersect across parameters"
    else:
        multi = np.nonzero(np.any(fam.multiplicities > 1, axis=1))[0].tolist()
        if multi:
            wit.update(reason="eigenvalues not simple", indices=multi[:20])
    return Condition(name, "sufficient", FAIL if wit else PASS, wit)


def _route_r5(ensemble, tols, depth):
    name = "R5_hermite"
    if ensemble.m < 2:
        return Condition(name, "sufficient", FAIL, {"reason": "single-input"})
    if not _route_contractible(ensemble):
        return Condition(name, "sufficient", FAIL, {"reason": "grid not declared contractible"})
    try:
        hd = hermite_form(ensemble, tols.rank_tol(ensemble.n))
    except UnreachableError as exc:
        return Condition(name, "sufficient", FAIL, {"reason": str(exc)})
    wit = {"indices": hd.indices}
    if not hd.constant:
        wit.update(reason="Hermite indices vary across grid", jumps=hd.jumps[:20])
        return Condition(name, "sufficient", FAIL, wit)
    subs = []
    ok = True
    for sp in hd.subpairs:
        rep = certify_uniform_sufficient(sp, tols, _depth=depth + 1)
        subs.append({"n": sp.n, "verdict": rep.overall_sufficient, "route": rep.route})
        ok = ok and rep.overall_sufficient == PASS
    wit["subpairs"] = subs
    if not ok:
        wit["reason"] = "a Hermite subpair is not certified"
    return Condition(name, "sufficient", PASS if ok else FAIL, wit)


def _is_upper(M, tol):
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    low = np.tril(M, -1)
    return float(np.max(np.abs(low))) <= tol * max(scale, 1e-300) if low.size else True


def _route_r6(ensemble, tols):
    name = "R6_triangular"
    n, m = ensemble.n, ensemble.m
    if m != n:
        return Condition(name, "sufficient", FAIL, {"reason": "B is not square"})
    if not _route_contractible(ensemble):
        return Condition(name, "sufficient", FAIL, {"reason": "grid not declared contractible"})
    rt = tols.rank_tol(n)
    for i in range(ensemble.K):
        if not (_is_upper(ensemble.A[i], 1e-12) and _is_upper(ensemble.B[i], 1e-12)):
            return Condition(name, "sufficient", FAIL, {"reason": "not upper triangular",
                                                        "index": i})
        if numerical_rank(ensemble.B[i], rt) < n:
            return Condition(name, "sufficient", FAIL, {"reason": "rank B < n", "index": i}, rt)
    for k in range(n):
        d = ensemble.A[:, k, k]
        coll = _injective(d, _value_tol(tols, d))
        if coll:
            return Condition(name, "sufficient", FAIL,
                             {"reason": f"a_{k + 1}{k + 1} not injective", "collisions": coll[:20]})
    return Condition(name, "sufficient", PASS, {}, rt)


def certify_uniform_sufficient(ensemble: MatrixEnsemble, tols: Optional[Tolerances] = None,
                               _depth: int = 0) -> CertificationReport:
    """Necessary conditions plus every sufficient route; the first passing route is reported."""
    tols = tols or Tolerances()
    conds, fam = _necessary_conditions(ensemble, tols)
    nec = _combine(c.verdict for c in conds)
    by_name = {c.name: c for c in conds}
    spec_tol = tols.spec_tol(fam.curves.ravel())
    routes = []
    if ensemble.n == 1:
        r1 = _scalar_condition(ensemble, tols)
        r1.kind = "sufficient"
        if r1.verdict == PASS and not _route_contractible(ensemble):
            r1.verdict = FAIL
            r1.witness["reason"] = "grid not declared contractible"
        routes.append(("R1", r1))
    else:
        routes.append(("R1", Condition("R1_scalar", "sufficient", FAIL, {"reason": "n != 1"})))
    routes.append(("R2", _route_r2(ensemble, tols)))
    if ensemble.m == 1 and nec == PASS and ensemble.n > 1:
        r3, _ = _route_r3(ensemble, tols, fam, spec_tol)
    else:
        reason = "not single-input" if ensemble.m != 1 else (
            "necessary conditions not all pass" if nec != PASS else "n <= 1")
        r3 = Condition("R3_spectral_decomposition", "sufficient", FAIL, {"reason": reason})
    routes.append(("R3", r3))
    routes.append(("R4", _route_r4(ensemble, fam, by_name)))
    if _depth < 2:
        routes.append(("R5", _route_r5(ensemble, tols, _depth)))
    routes.append(("R6", _route_r6(ensemble, tols)))
    route = next((tag for tag, c in routes if c.verdict == PASS), None)
    if nec == FAIL:
        suff = FAIL
    elif nec == PASS and route is not None:
        suff = PASS
    else:
        suff = INCONCLUSIVE
    return CertificationReport(conds + [c for _, c in routes], nec, suff,
                               route if suff == PASS else None, tols.resolved(ensemble, fam))


certify = certify_uniform_sufficient


# ---------------------------------------------------------------------------
# Jordan-type pairs


def certify_jordan(ensemble: MatrixEnsemble, tols: Optional[Tolerances] = None) -> CertificationReport:
    """Upper triangular A with constant diagonal lambda(theta) and constant B."""
    tols = tols or Tolerances()
    n = ensemble.n
    for i in range(ensemble.K):
        A = ensemble.A[i]
        scale = max(float(np.max(np.abs(A))) if A.size else 0.0, 1e-300)
        if not _is_upper(A, 1e-12):
            raise ValueError(f"certify_jordan: A not upper triangular at grid index {i}")
        d = np.diag(A)
        if n and np.max(np.abs(d - d[0])) > 1e-12 * scale:
            raise ValueError(f"certify_jordan: diagonal not constant at grid index {i}")
    Bs = ensemble.B
    if ensemble.K and np.max(np.abs(Bs - Bs[0])) > 1e-12 * max(1.0, float(np.max(np.abs(Bs)))):
        raise ValueError("certify_jordan: B varies across the grid")
    rt = tols.rank_tol(n)
    rank_b = numerical_rank(Bs[0], rt) if n else 0
    lam = ensemble.A[:, 0, 0] if n else np.zeros(ensemble.K)
    coll = _injective(lam, _value_tol(tols, lam))
    wit = {"rank_B": rank_b}
    if coll:
        wit["collisions"] = {"indices": coll[:20], "theta": _theta(ensemble, coll[:20])}
    g = ensemble.grid
    valid = g.topology != "explicit" and g.contractible and g.locally_connected
    if coll:
        verdict = FAIL
    elif rank_b < n:
        verdict = FAIL if valid else INCONCLUSIVE
        if not valid:
            wit["reason"] = "rank argument needs a contractible, locally connected continuum"
    else:
        verdict = PASS if valid else INCONCLUSIVE
    cond = Condition("jordan_rank_and_injective", "iff", verdict, wit, rt)
    nec = FAIL if verdict == FAIL else PASS
    suff = verdict if nec == PASS else FAIL
    return CertificationReport([cond], nec, suff, "jordan" if suff == PASS else None,
                               tols.resolved(ensemble))


# ---------------------------------------------------------------------------
# L^q


def _negligible(ensemble, idx, tols) -> bool:
    if not idx:
        return True
    if _weight(ensemble, idx) <= tols.measure:
        return True
    return bool(tols.allow_isolated and _isolated(ensemble, idx))


def certify_lq(ensemble: MatrixEnsemble, q: float = 2.0, tols: Optional[Tolerances] = None
               ) -> CertificationReport:
    if q < 1:
        raise ValueError("certify_lq: q must be >= 1")
    tols = tols or Tolerances()
    w = ensemble.grid.quadrature_weights
    if w is None or not np.any(w > 0):
        raise ValueError("certify_lq: missing quadrature weights")
    fam = eigen_curves(ensemble)
    rt = tols.rank_tol(ensemble.n)
    bad, _ = _pointwise_reachability(ensemble, rt)
    conds = []
    wit = {"deficiency_weight": _weight(ensemble, bad), "indices": bad[:20],
           "theta": _theta(ensemble, bad[:20])}
    conds.append(Condition("lq_a_reachable_almost_everywhere", "necessary",
                           PASS if _negligible(ensemble, bad, tols) else FAIL, wit, tols.measure))
    # geometric multiplicity at most m (one for single input)
    geo_bad = np.nonzero(np.any(fam.geometric_mults > max(ensemble.m, 1), axis=1))[0].tolist()
    conds.append(Condition("lq_b_geometric_multiplicity", "necessary",
                           PASS if _negligible(ensemble, geo_bad, tols) else FAIL,
                           {"indices": geo_bad[:20], "weight": _weight(ensemble, geo_bad)},
                           tols.measure))
    if ensemble.n == 1:
        a = ensemble.A[:, 0, 0]
        coll = _injective(a, _value_tol(tols, a))
        conds.append(Condition("lq_scalar_essentially_univalent", "necessary",
                               PASS if _negligible(ensemble, coll, tols) else FAIL,
                               {"collision_weight": _weight(ensemble, coll), "indices": coll[:20]},
                               tols.measure))
    nec = _combine(c.verdict for c in conds)
    route = None
    if nec == FAIL:
        suff = FAIL
    else:
        uni = certify_uniform_sufficient(ensemble, tols)
        conds.append(Condition("lq_via_uniform", "sufficient", uni.overall_sufficient,
                               {"route": uni.route}))
        suff = PASS if uni.overall_sufficient == PASS else INCONCLUSIVE
        route = "uniform:" + uni.route if suff == PASS else None
    rep = CertificationReport(conds, nec, suff, route, tols.resolved(ensemble, fam))
    rep.tolerances["q"] = float(q)
    return rep


# ---------------------------------------------------------------------------
# kernel witness and output reachability


@dataclass(frozen=True, eq=False)
class KernelWitness:
    xi: np.ndarray
    deficiency_set: List[int]


def _fix_phase(v, eps=1e-12):
    for x in v:
        if abs(x) > eps:
            return v * (np.conj(x) / abs(x))
    return v


def kernel_witness(ensemble: MatrixEnsemble, tol: Optional[float] = None) -> KernelWitness:
    n, K = ensemble.n, ensemble.K
    tol = default_rank_tol(n) if tol is None else tol
    xi = np.zeros((K, n), dtype=complex)
    deficient = []
    for i in range(K):
        R = kalman_matrix(ensemble.A[i], ensemble.B[i])
        if n and rank_ratio(R, n) <= tol:
            U = np.linalg.svd(R)[0]
            xi[i] = _fix_phase(U[:, n - 1])
            deficient.append(i)
    return KernelWitness(xi, deficient)


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    columns: np.ndarray    # (p, m * K_max), column index k * m + j
    rank: int
    k_max: int
    tol: float
    verdict: str


def output_moment_rank(ensemble: MatrixEnsemble, k_max: Optional[int] = None,
                       tol: Optional[float] = None) -> MomentMatrix:
    if ensemble.C is None:
        raise ValueError("output_moment_rank: ensemble has no output matrix C")
    n, m, p = ensemble.n, ensemble.m, ensemble.p
    k_max = n * p + 1 if k_max is None else int(k_max)
    if k_max < 1:
        raise ValueError("output_moment_rank: k_max must be >= 1")
    w = ensemble.grid.quadrature_weights
    if w is None or not np.any(w > 0):
        raise ValueError("output_moment_rank: missing quadrature weights")
    tol = default_rank_tol(max(n, 1)) if tol is None else tol
    cols = np.zeros((p, m * k_max), dtype=complex)
    X = ensemble.B.astype(complex)
    for k in range(k_max):
        cols[:, k * m:(k + 1) * m] = np.einsum("i,ipn,inm->pm", w, ensemble.C, X)
        X = ensemble.A @ X
    r = numerical_rank(cols, tol)
    return MomentMatrix(cols, r, k_max, tol, PASS if r == p else FAIL)


def certify_output(ensemble: MatrixEnsemble, tols: Optional[Tolerances] = None,
                   k_max: Optional[int] = None) -> CertificationReport:
    if ensemble.C is None:
        raise ValueError("certify_output: ensemble has no output matrix C")
    tols = tols or Tolerances()
    mm = output_moment_rank(ensemble, k_max, tols.rank_tol(max(ensemble.n, 1)))
    exact = Condition("output_moment_rank", "iff", mm.verdict,
                      {"rank": mm.rank, "p": ensemble.p, "k_max": mm.k_max}, mm.tol)
    uni = certify_uniform_sufficient(ensemble, tols)
    rt = tols.rank_tol(max(ensemble.p, 1))
    full = [i for i in range(ensemble.K) if numerical_rank(ensemble.C[i], rt) == ensemble.p
            and ensemble.p > 0]
    ok = uni.overall_sufficient == PASS and bool(full)
    wit = {"uniform_route": uni.route, "full_rank_points": full[:5]}
    if not full:
        wit["reason"] = "rank C(theta) < p at every grid point"
    elif uni.overall_sufficient != PASS:
        wit["reason"] = "(A, B) not certified uniformly reachable"
    suff = Condition("output_pointwise_rank", "sufficient", PASS if ok else FAIL, wit, rt)
    nec = exact.verdict
    overall = PASS if (nec == PASS) else FAIL
    route = "moment_rank" if nec == PASS else None
    if ok and route is None:
        route = "pointwise_rank"
    rep = CertificationReport([exact, suff], PASS if overall == PASS else FAIL,
                              overall, route, tols.resolved(ensemble))
    return rep
