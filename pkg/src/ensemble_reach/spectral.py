"""Eigenvalue curves, spectral groupings, contour projections and block decomposition."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import kernels
from ._util import spectral_norm
from .model import MatrixEnsemble, MatrixFamily

MULT_TOL = 1e-6
RESOLVENT_FLOOR = 1e-12


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralFamily:
    curves: np.ndarray            # (n, K) complex
    multiplicities: np.ndarray    # (K, n) algebraic
    geometric_mults: np.ndarray   # (K, n)
    points: np.ndarray            # grid points, for CSV and diagnostics
    monodromy: Optional[List[int]] = None  # circle grids: curve j continues as curve monodromy[j]

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    @property
    def K(self) -> int:
        return self.curves.shape[1]

    def diameter(self) -> float:
        z = self.curves.ravel()
        if z.size < 2:
            return 0.0
        return float(np.max(np.abs(z[:, None] - z[None, :]))) if z.size <= 4096 else \
            float(max(np.ptp(z.real), np.ptp(z.imag)) * np.sqrt(2))


@dataclass(frozen=True, eq=False)
class Grouping:
    groups: List[List[int]]
    gaps: np.ndarray              # (k, k) minimum distances, inf on diagonal
    gap_tol: float
    family: SpectralFamily

    @property
    def k(self) -> int:
        return len(self.groups)

    def min_gap(self) -> float:
        if self.k < 2:
            return float("inf")
        return float(np.min(self.gaps[~np.eye(self.k, dtype=bool)]))

    def cloud(self, i) -> np.ndarray:
        return self.family.curves[self.groups[i]].ravel()

    def strictly_disjoint(self) -> bool:
        return self.k < 2 or self.min_gap() > 0


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    projections: np.ndarray       # (k, K, n, n)
    contours: List[dict]          # per group: centers (K,), radii (K,), fixed flag
    ranks: np.ndarray             # (k, K)
    transform_curves: Optional[np.ndarray] = None   # (K, n, n)
    subblocks: List[np.ndarray] = field(default_factory=list)    # per group (K, r_i, r_i)
    sub_inputs: List[np.ndarray] = field(default_factory=list)   # per group (K, r_i, m)


def _scale(A) -> float:
    return spectral_norm(A)


def _point_multiplicities(A, lam):
    n = lam.size
    scale = _scale(A)
    tol = MULT_TOL * scale
    labels = kernels.cluster_radius(lam, tol) if n else np.zeros(0, int)
    alg = np.array([np.sum(labels == labels[j]) for j in range(n)], dtype=int)
    geo = np.zeros(n, dtype=int)
    cache = {}
    for j in range(n):
        lab = labels[j]
        if lab not in cache:
            mu = lam[labels == lab].mean()
            s = np.linalg.svd(mu * np.eye(n) - A, compute_uv=False)
            cache[lab] = int(np.sum(s <= max(tol, 1e-14 * max(scale, 1e-300))))
            cache[lab] = max(cache[lab], 1)
        geo[j] = min(cache[lab], alg[j])
    return alg, geo


def _sorted_eigs(A):
    lam = np.linalg.eigvals(A) if A.shape[0] else np.zeros(0, complex)
    order = np.lexsort((np.round(lam.imag, 12), np.round(lam.real, 12)))
    return lam[order]


def eigen_curves(ensemble: MatrixEnsemble) -> SpectralFamily:
    """Eigenvalues per grid point, matched between neighbours by minimal-cost assignment."""
    n, K = ensemble.n, ensemble.K
    curves = np.zeros((n, K), dtype=complex)
    alg = np.zeros((K, n), dtype=int)
    geo = np.zeros((K, n), dtype=int)
    if not np.all(np.isfinite(ensemble.A)):
        raise SpectralError("eigen-solver failure: non-finite entries")
    prev = None
    for i in range(K):
        A = ensemble.A[i]
        lam = _sorted_eigs(A)
        if prev is not None and n:
            cost = np.abs(prev[:, None] - lam[None, :])
            _, col = linear_sum_assignment(cost)
            lam = lam[col]
        curves[:, i] = lam
        alg[i], geo[i] = _point_multiplicities(A, lam)
        prev = lam
    mono = None
    if ensemble.grid.topology == "circle" and n and K > 1:
        cost = np.abs(curves[:, -1][:, None] - curves[:, 0][None, :])
        _, col = linear_sum_assignment(cost)
        mono = [int(c) for c in col]
    return SpectralFamily(curves, alg, geo, ensemble.points.copy(), mono)


def _min_cloud_distance(a, b) -> float:
    if a.size == 0 or b.size == 0:
        return float("inf")
    tree = cKDTree(np.column_stack([b.real, b.imag]))
    d, _ = tree.query(np.column_stack([a.real, a.imag]))
    return float(np.min(d))


def group_selections(family: SpectralFamily, gap_tol: float) -> Grouping:
    """Finest partition of curves whose spectral sets are pairwise farther apart than ``gap_tol``."""
    n, K = family.n, family.K
    if n == 0:
        return Grouping([], np.zeros((0, 0)), gap_tol, family)
    flat = family.curves.ravel()           # curve-major: index j*K + i
    labels = kernels.cluster_radius(flat, gap_tol)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    first_curve = {}
    for idx, lab in enumerate(labels):
        j = idx // K
        if lab in first_curve:
            ra, rb = find(first_curve[lab]), find(j)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        else:
            first_curve[lab] = j
    comps = {}
    for j in range(n):
        comps.setdefault(find(j), []).append(j)
    groups = sorted(comps.values(), key=lambda g: g[0])
    k = len(groups)
    gaps = np.full((k, k), np.inf)
    for a in range(k):
        for b in range(a + 1, k):
            d = _min_cloud_distance(family.curves[groups[a]].ravel(), family.curves[groups[b]].ravel())
            gaps[a, b] = gaps[b, a] = d
    return Grouping(groups, gaps, gap_tol, family)


def trivial_grouping(family: SpectralFamily) -> Grouping:
    return Grouping([list(range(family.n))], np.full((1, 1), np.inf), 0.0, family)


# ---------------------------------------------------------------------------
# contours and projections


def enclosing_circle(points):
    """Smallest enclosing circle (Welzl, iterative, deterministic shuffle)."""
    pts = np.unique(np.asarray(points, dtype=complex).ravel())
    if pts.size == 0:
        raise ValueError("enclosing_circle: empty point set")
    if pts.size == 1:
        return complex(pts[0]), 0.0
    rng = np.random.default_rng(0)
    pts = pts[rng.permutation(pts.size)]
    eps = 1e-12

    def circ2(a, b):
        c = (a + b) / 2
        return c, abs(a - c)

    def circ3(a, b, c):
        bx, by = b.real - a.real, b.imag - a.imag
        cx, cy = c.real - a.real, c.imag - a.imag
        d = 2 * (bx * cy - by * cx)
        if abs(d) < 1e-300:
            cands = [circ2(a, b), circ2(a, c), circ2(b, c)]
            return max(cands, key=lambda t: t[1])
        ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / d
        uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / d
        center = complex(a.real + ux, a.imag + uy)
        return center, abs(a - center)

    def inside(c, r, p):
        return abs(p - c) <= r * (1 + eps) + eps

    c, r = pts[0], 0.0
    for i in range(1, pts.size):
        if inside(c, r, pts[i]):
            continue
        c, r = pts[i], 0.0
        for j in range(i):
            if inside(c, r, pts[j]):
                continue
            c, r = circ2(pts[i], pts[j])
            for k in range(j):
                if not inside(c, r, pts[k]):
                    c, r = circ3(pts[i], pts[j], pts[k])
    return complex(c), float(r)


def _group_eigs(grouping: Grouping, gi: int, i: int):
    fam = grouping.family
    inside = fam.curves[grouping.groups[gi], i]
    others = [j for j in range(fam.n) if j not in grouping.groups[gi]]
    return inside, fam.curves[others, i]


def build_contours(grouping: Grouping) -> List[dict]:
    """Circle contours per group: one fixed circle when it separates at every point, else per point."""
    fam = grouping.family
    K = fam.K
    k = grouping.k
    out = []
    for gi in range(k):
        if k == 1:
            gap = max(fam.diameter(), 1.0)
        else:
            gap = float(np.min(np.delete(grouping.gaps[gi], gi)))
            if not gap > 0:
                raise SpectralError(f"contours overlap: group {gi} has zero gap to another group")
        c, R = enclosing_circle(grouping.cloud(gi))
        r_fix = R + gap / 3
        fixed_ok = True
        for i in range(K):
            _, outside = _group_eigs(grouping, gi, i)
            if outside.size and np.min(np.abs(outside - c)) <= r_fix + gap / 6:
                fixed_ok = False
                break
        if fixed_ok:
            out.append({"centers": np.full(K, c), "radii": np.full(K, r_fix), "fixed": True})
            continue
        centers = np.zeros(K, dtype=complex)
        radii = np.zeros(K)
        for i in range(K):
            inside, outside = _group_eigs(grouping, gi, i)
            ci, Ri = enclosing_circle(inside)
            d_out = float(np.min(np.abs(outside - ci))) if outside.size else np.inf
            if not d_out > Ri * (1 + 1e-9) + 1e-300:
                raise SpectralError(f"contours overlap: group {gi} at grid index {i}")
            centers[i] = ci
            radii[i] = Ri + min(gap / 3, (d_out - Ri) / 2)
        out.append({"centers": centers, "radii": radii, "fixed": False})
    return out


def contour_projection(A, center, radius, nodes=64):
    """Trapezoid rule for ``(1/2 pi i) * integral of (zI - A)^{-1} dz`` on a circle."""
    n = A.shape[0]
    phi = 2 * np.pi * np.arange(nodes) / nodes
    w = radius * np.exp(1j * phi)
    z = center + w
    M = z[:, None, None] * np.eye(n)[None] - A[None]
    smin = np.linalg.svd(M, compute_uv=False)[:, -1]
    floor = RESOLVENT_FLOOR * max(1.0, spectral_norm(A))
    if np.any(smin < floor):
        raise SpectralError("resolvent near-singular on contour")
    R = np.linalg.inv(M)
    return np.tensordot(w, R, axes=(0, 0)) / nodes


def spectral_projections(ensemble: MatrixEnsemble, grouping: Grouping,
                         quadrature_nodes: int = 64) -> SpectralDecomposition:
    n, K, k = ensemble.n, ensemble.K, grouping.k
    contours = build_contours(grouping)
    P = np.zeros((k, K, n, n), dtype=complex)
    ranks = np.zeros((k, K), dtype=int)
    for gi in range(k):
        ct = contours[gi]
        for i in range(K):
            P[gi, i] = contour_projection(ensemble.A[i], ct["centers"][i], ct["radii"][i],
                                          quadrature_nodes)
            s = np.linalg.svd(P[gi, i], compute_uv=False)
            ranks[gi, i] = int(np.sum(s > 0.5))
    return SpectralDecomposition(P, contours, ranks)


def projection_residuals(ensemble: MatrixEnsemble, dec: SpectralDecomposition) -> dict:
    """Max over the grid of each projection invariant, relative to max(1, ||A||)."""
    P = dec.projections
    k, K, n = P.shape[0], P.shape[1], ensemble.n
    out = {"idempotent": 0.0, "orthogonal": 0.0, "partition": 0.0, "commute": 0.0}
    for i in range(K):
        A = ensemble.A[i]
        s = max(1.0, spectral_norm(A))
        for a in range(k):
            out["idempotent"] = max(out["idempotent"], np.linalg.norm(P[a, i] @ P[a, i] - P[a, i], 2) / s)
            out["commute"] = max(out["commute"], np.linalg.norm(A @ P[a, i] - P[a, i] @ A, 2) / s)
            for b in range(k):
                if a != b:
                    out["orthogonal"] = max(out["orthogonal"], np.linalg.norm(P[a, i] @ P[b, i], 2) / s)
        out["partition"] = max(out["partition"],
                               np.linalg.norm(P[:, i].sum(axis=0) - np.eye(n), 2) / s if n else 0.0)
    return {key: float(v) for key, v in out.items()}


def decompose(ensemble: MatrixEnsemble, grouping: Grouping, quadrature_nodes: int = 64):
    """Block decomposition along a strictly disjoint grouping.

    Returns ``(SpectralDecomposition, [sub-ensembles])``.
    """
    if not ensemble.grid.contractible:
        raise SpectralError("decompose: grid must be declared contractible")
    dec = spectral_projections(ensemble, grouping, quadrature_nodes)
    k, K, n = grouping.k, ensemble.K, ensemble.n
    for gi in range(k):
        if np.any(dec.ranks[gi] != dec.ranks[gi, 0]):
            bad = int(np.nonzero(dec.ranks[gi] != dec.ranks[gi, 0])[0][0])
            raise SpectralError(f"rank jump in projection: group {gi} at grid index {bad}")
    check_angles = ensemble.grid.topology != "explicit"
    bases = []
    for gi in range(k):
        r = int(dec.ranks[gi, 0])
        Q = np.zeros((K, n, r), dtype=complex)
        prev = None
        for i in range(K):
            U = np.linalg.svd(dec.projections[gi, i])[0][:, :r]
            if prev is not None and r:
                W, S, Vh = np.linalg.svd(U.conj().T @ prev)
                if check_angles and S[-1] < np.cos(np.pi / 4):
                    raise SpectralError(f"alignment breakdown: group {gi} between grid indices "
                                        f"{i - 1} and {i}")
                U = U @ (W @ Vh)
            Q[i] = U
            prev = U
        bases.append(Q)
    T = np.concatenate(bases, axis=2) if bases else np.zeros((K, n, 0), dtype=complex)
    subblocks, sub_inputs, subs = [], [], []
    starts = np.concatenate([[0], np.cumsum([b.shape[2] for b in bases])]).astype(int)
    Tinv_B = np.array([np.linalg.solve(T[i], ensemble.B[i]) for i in range(K)]) if n else \
        np.zeros((K, 0, ensemble.m), dtype=complex)
    for gi, Q in enumerate(bases):
        Ai = np.einsum("kji,kjl,klm->kim", Q.conj(), ensemble.A, Q)
        Bi = Tinv_B[:, starts[gi]:starts[gi + 1], :]
        subblocks.append(Ai)
        sub_inputs.append(Bi)
        C = None
        if ensemble.C is not None:
            C = MatrixFamily.samples(np.einsum("kpn,knr->kpr", ensemble.C, Q))
        subs.append(MatrixEnsemble(ensemble.grid, MatrixFamily.samples(Ai), MatrixFamily.samples(Bi),
                                   C, ensemble.time_kind, "complex"))
    dec = SpectralDecomposition(dec.projections, dec.contours, dec.ranks, T, subblocks, sub_inputs)
    return dec, subs


# ---------------------------------------------------------------------------
# planar separation


def is_nonseparating(cloud, dilation: float, resolution: int = 256) -> bool:
    """True when the complement of the dilated cloud is connected (at raster resolution)."""
    if resolution < 8:
        raise ValueError("is_nonseparating: resolution must be >= 8")
    if not dilation > 0:
        raise ValueError("is_nonseparating: dilation must be positive")
    pts = np.asarray(cloud, dtype=complex).ravel()
    if pts.size == 0:
        raise ValueError("is_nonseparating: empty cloud")
    x0, x1 = pts.real.min() - 2 * dilation, pts.real.max() + 2 * dilation
    y0, y1 = pts.imag.min() - 2 * dilation, pts.imag.max() + 2 * dilation
    h = max(x1 - x0, y1 - y0) / resolution
    nx = max(int(np.ceil((x1 - x0) / h)), 3)
    ny = max(int(np.ceil((y1 - y0) / h)), 3)
    blocked = kernels.rasterize_disks(pts.real, pts.imag, x0, y0, h, h, nx, ny, dilation)
    reached = kernels.flood_reach(blocked)
    free = blocked == 0
    return bool(np.all(reached[free] == 1))


def curve_dilation(curves, gap: float = float("inf"), closed: bool = False) -> float:
    """Dilation for a sampled curve cloud ``(n_curves, K)``.

    Large enough to bridge consecutive samples, otherwise small relative to the
    cloud (2% of its extent) and at most half the gap to other groups, so holes
    in the cloud are not filled in.
    """
    c = np.atleast_2d(np.asarray(curves, dtype=complex))
    if closed and c.shape[1] > 1:
        c = np.concatenate([c, c[:, :1]], axis=1)
    step = float(np.max(np.abs(np.diff(c, axis=1)))) if c.shape[1] > 1 else 0.0
    pts = c.ravel()
    diam = float(max(np.ptp(pts.real), np.ptp(pts.imag)))
    small = 0.02 * diam if diam > 0 else 1e-3 * max(1.0, float(np.max(np.abs(pts))))
    if np.isfinite(gap) and gap > 0:
        small = min(small, gap / 2)
    return max(0.51 * step, small)


def curves_to_csv(family: SpectralFamily) -> str:
    buf = io.StringIO()
    head = ["theta_re", "theta_im"]
    for j in range(family.n):
        head += [f"lambda{j + 1}_re", f"lambda{j + 1}_im"]
    buf.write(",".join(head) + "\n")
    for i in range(family.K):
        row = [family.points[i].real, family.points[i].imag]
        for j in range(family.n):
            row += [family.curves[j, i].real, family.curves[j, i].imag]
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    return buf.getvalue()
