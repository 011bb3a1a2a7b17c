"""Parameter grids, matrix families, targets and input plans.

A family is stored in its source representation (polynomial coefficients in
theta, ascending degree, or per-point samples) together with the evaluated
stack of shape ``(K, rows, cols)``; the stack is what every other module uses.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TOPOLOGIES = ("interval", "curve", "circle", "explicit")
TIME_KINDS = ("discrete", "continuous")
FIELD_KINDS = ("real", "complex")


class SpecError(ValueError):
    """Malformed or inconsistent ensemble document."""


# ---------------------------------------------------------------------------
# grid


def _default_weights(points, topology):
    K = len(points)
    if topology == "interval":
        if K == 1:
            return np.ones(1)
        x = points.real
        w = np.zeros(K)
        h = np.diff(x)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w
    if topology == "circle":
        return np.full(K, 2 * math.pi / K)
    return np.full(K, 1.0 / K)


@dataclass(frozen=True, eq=False)
class ParameterGrid:
    points: np.ndarray
    topology: str = "interval"
    contractible: bool = True
    locally_connected: bool = True
    weights: Optional[np.ndarray] = None
    # interval bounds or circle sample count, kept for serialization
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=complex).ravel()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.topology not in TOPOLOGIES:
            raise SpecError(f"parameter.kind: unknown topology {self.topology!r}")
        if pts.size < 1:
            raise SpecError("parameter: grid must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise SpecError("parameter.points: non-finite grid point")
        if len(np.unique(pts)) != pts.size:
            raise SpecError("parameter.points: duplicate grid points")
        if self.topology == "interval":
            if np.any(pts.imag != 0):
                raise SpecError("parameter.points: interval points must be real")
            if np.any(np.diff(pts.real) <= 0):
                raise SpecError("parameter.points: interval points must be strictly increasing")
        w = self.weights
        if w is not None:
            w = np.array(w, dtype=float).ravel()
            if w.shape != pts.shape:
                raise SpecError("weights: length must equal the number of grid points")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise SpecError("weights: must be finite and nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.points.size

    @property
    def quadrature_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return _default_weights(self.points, self.topology)

    @property
    def ordered(self) -> bool:
        """True for one-dimensional ordered topologies."""
        return self.topology in ("interval", "curve", "circle")

    def same_as(self, other: "ParameterGrid") -> bool:
        return (self.topology == other.topology and self.K == other.K
                and np.array_equal(self.points, other.points))

    @classmethod
    def interval(cls, a, b, samples, **kw):
        if samples < 1:
            raise SpecError("parameter.samples: must be >= 1")
        if samples > 1 and not b > a:
            raise SpecError("parameter: need a < b")
        pts = np.linspace(a, b, samples) if samples > 1 else np.array([float(a)])
        meta = {"a": float(a), "b": float(b), "samples": int(samples)}
        return cls(pts, "interval", meta=meta, **kw)

    @classmethod
    def circle(cls, samples, **kw):
        if samples < 1:
            raise SpecError("parameter.samples: must be >= 1")
        pts = np.exp(2j * np.pi * np.arange(samples) / samples)
        kw.setdefault("contractible", False)
        return cls(pts, "circle", meta={"samples": int(samples)}, **kw)

    @classmethod
    def explicit(cls, points, topology="explicit", **kw):
        return cls(np.asarray(points, dtype=complex), topology, **kw)

    def subset(self, idx) -> "ParameterGrid":
        idx = np.asarray(idx, dtype=int)
        w = None if self.weights is None else self.weights[idx]
        meta = dict(self.meta)
        meta["restricted"] = True
        return ParameterGrid(self.points[idx], self.topology, self.contractible,
                             self.locally_connected, w, meta)


# ---------------------------------------------------------------------------
# matrix families


def horner(coeffs, z):
    """Evaluate ascending coefficient arrays ``(..., d+1)`` at points ``z``.

    Returns shape ``z.shape + coeffs.shape[:-1]``.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    z = np.asarray(z, dtype=complex)
    out = np.zeros(z.shape + coeffs.shape[:-1], dtype=complex)
    zz = z.reshape(z.shape + (1,) * (coeffs.ndim - 1))
    for k in range(coeffs.shape[-1] - 1, -1, -1):
        out = out * zz + coeffs[..., k]
    return out


@dataclass(frozen=True, eq=False)
class MatrixFamily:
    """One of A, B, C. ``kind`` is "poly" (coeffs ``(r, c, d+1)``) or "samples" (``(r, c, K)``)."""
    kind: str
    data: np.ndarray
    rows: int
    cols: int

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=complex)
        if self.kind == "poly":
            if self.data.shape[-1] == 0:
                return np.zeros((points.size, self.rows, self.cols), dtype=complex)
            return horner(self.data, points)
        return np.moveaxis(self.data, -1, 0).copy()

    def subset(self, idx) -> "MatrixFamily":
        if self.kind == "poly":
            return self
        return MatrixFamily("samples", self.data[..., np.asarray(idx, dtype=int)], self.rows, self.cols)

    @classmethod
    def constant(cls, M):
        M = np.atleast_2d(np.asarray(M, dtype=complex))
        return cls("poly", M[..., None], M.shape[0], M.shape[1])

    @classmethod
    def poly(cls, coeffs):
        """``coeffs[r][c]`` is an ascending coefficient list (ragged allowed)."""
        rows = len(coeffs)
        cols = len(coeffs[0]) if rows else 0
        deg = max([len(c) for row in coeffs for c in row] + [1])
        data = np.zeros((rows, cols, deg), dtype=complex)
        for i, row in enumerate(coeffs):
            if len(row) != cols:
                raise SpecError("entries: ragged matrix rows")
            for j, c in enumerate(row):
                c = np.asarray(c, dtype=complex).ravel()
                data[i, j, :c.size] = c
        return cls("poly", data, rows, cols)

    @classmethod
    def samples(cls, stack):
        """``stack`` has shape ``(K, rows, cols)``."""
        stack = np.asarray(stack, dtype=complex)
        if stack.ndim != 3:
            raise SpecError("entries: sample stack must be 3-dimensional")
        return cls("samples", np.moveaxis(stack, 0, -1).copy(), stack.shape[1], stack.shape[2])


def _block_diag_family(f1: MatrixFamily, f2: MatrixFamily, K, pts, stack=False):
    r = f1.rows + f2.rows
    c = f1.cols if stack else f1.cols + f2.cols
    c2 = 0 if stack else f1.cols
    if f1.kind == "poly" and f2.kind == "poly":
        d = max(f1.data.shape[-1], f2.data.shape[-1])
        data = np.zeros((r, c, d), dtype=complex)
        data[:f1.rows, :f1.cols, :f1.data.shape[-1]] = f1.data
        data[f1.rows:, c2:c2 + f2.cols, :f2.data.shape[-1]] = f2.data
        return MatrixFamily("poly", data, r, c)
    out = np.zeros((K, r, c), dtype=complex)
    out[:, :f1.rows, :f1.cols] = f1.evaluate(pts)
    out[:, f1.rows:, c2:c2 + f2.cols] = f2.evaluate(pts)
    return MatrixFamily.samples(out)


@dataclass(frozen=True, eq=False)
class MatrixEnsemble:
    grid: ParameterGrid
    A_family: MatrixFamily
    B_family: MatrixFamily
    C_family: Optional[MatrixFamily] = None
    time_kind: str = "discrete"
    field_kind: str = "complex"

    def __post_init__(self):
        if self.time_kind not in TIME_KINDS:
            raise SpecError(f"time: unknown value {self.time_kind!r}")
        if self.field_kind not in FIELD_KINDS:
            raise SpecError(f"field: unknown value {self.field_kind!r}")
        n = self.A_family.rows
        if self.A_family.cols != n:
            raise SpecError("A: dimension mismatch (matrix must be square)")
        if self.B_family.rows != n:
            raise SpecError(f"B: dimension mismatch ({self.B_family.rows} rows, n={n})")
        if self.C_family is not None and self.C_family.cols != n:
            raise SpecError(f"C: dimension mismatch ({self.C_family.cols} columns, n={n})")
        K = self.grid.K
        for name, fam in (("A", self.A_family), ("B", self.B_family), ("C", self.C_family)):
            if fam is None:
                continue
            if fam.kind == "samples" and fam.data.shape[-1] != K:
                raise SpecError(f"{name}: dimension mismatch (expected {K} samples per entry)")
            vals = fam.evaluate(self.grid.points)
            if not np.all(np.isfinite(vals)):
                raise SpecError(f"{name}: entry not finite at some grid point")
            if self.field_kind == "real":
                if fam.kind == "poly" and np.any(fam.data.imag != 0):
                    raise SpecError(f"{name}: real-field violation (complex coefficient)")
                if np.any(vals.imag != 0):
                    raise SpecError(f"{name}: real-field violation (complex value on grid)")
            vals.setflags(write=False)
            object.__setattr__(self, "_" + name, vals)
        if self.C_family is None:
            object.__setattr__(self, "_C", None)

    # evaluated stacks
    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def B(self) -> np.ndarray:
        return self._B

    @property
    def C(self) -> Optional[np.ndarray]:
        return self._C

    @property
    def n(self) -> int:
        return self.A_family.rows

    @property
    def m(self) -> int:
        return self.B_family.cols

    @property
    def p(self) -> int:
        return 0 if self.C_family is None else self.C_family.rows

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def with_families(self, A=None, B=None, C=None, grid=None, drop_C=False):
        return MatrixEnsemble(grid or self.grid, A or self.A_family, B or self.B_family,
                              None if drop_C else (C or self.C_family),
                              self.time_kind, self.field_kind)

    @classmethod
    def from_arrays(cls, grid, A, B, C=None, time_kind="discrete", field_kind="complex"):
        """Build a sampled ensemble from stacks ``(K, n, n)``, ``(K, n, m)``, ``(K, p, n)``."""
        Cf = None if C is None else MatrixFamily.samples(C)
        return cls(grid, MatrixFamily.samples(A), MatrixFamily.samples(B), Cf, time_kind, field_kind)

    @classmethod
    def from_poly(cls, grid, A, B, C=None, time_kind="discrete", field_kind="complex"):
        """Build from nested coefficient lists (ascending degree in theta)."""
        Cf = None if C is None else MatrixFamily.poly(C)
        return cls(grid, MatrixFamily.poly(A), MatrixFamily.poly(B), Cf, time_kind, field_kind)


def evaluate(ensemble: MatrixEnsemble, index: int):
    """Return ``(A, B, C)`` at grid point ``index``; ``C`` is None when absent."""
    if not 0 <= index < ensemble.K:
        raise IndexError(f"grid index {index} out of range for K={ensemble.K}")
    C = None if ensemble.C is None else ensemble.C[index].copy()
    return ensemble.A[index].copy(), ensemble.B[index].copy(), C


def restrict(ensemble: MatrixEnsemble, subset: Sequence[int]) -> MatrixEnsemble:
    idx = np.asarray(subset, dtype=int).ravel()
    if idx.size == 0:
        raise ValueError("restrict: empty subset")
    if np.any(idx < 0) or np.any(idx >= ensemble.K):
        raise IndexError("restrict: index out of range")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("restrict: subset must be strictly increasing (grid order)")
    grid = ensemble.grid.subset(idx)
    C = None if ensemble.C_family is None else ensemble.C_family.subset(idx)
    return MatrixEnsemble(grid, ensemble.A_family.subset(idx), ensemble.B_family.subset(idx), C,
                          ensemble.time_kind, ensemble.field_kind)


def parallel_compose(e1: MatrixEnsemble, e2: MatrixEnsemble) -> MatrixEnsemble:
    """Parallel connection: ``A = diag(A1, A2)``, ``B = [B1; B2]``, ``C = [C1, C2]`` if both present."""
    if not e1.grid.same_as(e2.grid):
        raise ValueError("parallel_compose: grid mismatch")
    if e1.m != e2.m:
        raise ValueError(f"parallel_compose: input-dimension mismatch ({e1.m} vs {e2.m})")
    if e1.time_kind != e2.time_kind:
        raise ValueError("parallel_compose: time kind mismatch")
    pts, K = e1.points, e1.K
    A = _block_diag_family(e1.A_family, e2.A_family, K, pts)
    B = _block_diag_family(e1.B_family, e2.B_family, K, pts, stack=True)
    C = None
    if e1.C_family is not None and e2.C_family is not None and e1.p == e2.p:
        Cs = np.concatenate([e1.C, e2.C], axis=2)
        C = MatrixFamily.samples(Cs)
    fk = "real" if e1.field_kind == e2.field_kind == "real" else "complex"
    return MatrixEnsemble(e1.grid, A, B, C, e1.time_kind, fk)


# ---------------------------------------------------------------------------
# targets and inputs


@dataclass(frozen=True, eq=False)
class TargetEnsemble:
    values: np.ndarray
    initial: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=complex))
        object.__setattr__(self, "values", v)
        if self.initial is None:
            object.__setattr__(self, "initial", np.zeros_like(v))
        else:
            x0 = np.atleast_2d(np.asarray(self.initial, dtype=complex))
            if x0.shape != v.shape:
                raise ValueError("target: initial state shape does not match values")
            object.__setattr__(self, "initial", x0)
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.initial))):
            raise ValueError("target: non-finite entries")

    def check(self, ensemble: MatrixEnsemble):
        if self.values.shape != (ensemble.K, ensemble.n):
            raise ValueError(f"target: shape {self.values.shape} does not match "
                             f"(K, n)=({ensemble.K}, {ensemble.n})")

    @property
    def has_initial(self) -> bool:
        return bool(np.any(self.initial != 0))

    @classmethod
    def from_function(cls, ensemble: MatrixEnsemble, func, initial=None):
        vals = np.array([np.asarray(func(t), dtype=complex).ravel() for t in ensemble.points])
        return cls(vals.reshape(ensemble.K, ensemble.n), initial)


@dataclass(frozen=True, eq=False)
class InputPlan:
    inputs: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.inputs, dtype=complex)
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError("input plan: need a (T, m) array with T >= 1")
        if not np.all(np.isfinite(u)):
            raise ValueError("input plan: non-finite entries")
        object.__setattr__(self, "inputs", u)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def to_document(self):
        return {"horizon": self.horizon, "inputs": [[_cnum(x) for x in row] for row in self.inputs]}


def vector_norms(residual: np.ndarray, kind: str = "2") -> np.ndarray:
    """Per-point norm of a ``(K, n)`` residual; ``kind`` is "2" or "inf"."""
    r = np.asarray(residual)
    if r.shape[-1] == 0:
        return np.zeros(r.shape[:-1])
    if kind == "2":
        return np.linalg.norm(r, axis=-1)
    if kind == "inf":
        return np.max(np.abs(r), axis=-1)
    raise ValueError(f"unknown vector norm {kind!r}")


# ---------------------------------------------------------------------------
# documents


def _cnum(z):
    z = complex(z)
    return [float(z.real), float(z.imag)]


def _parse_complex(x, where):
    if isinstance(x, bool):
        raise SpecError(f"{where}: expected number, got boolean")
    if isinstance(x, (int, float)):
        return complex(float(x), 0.0)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
        return complex(float(x[0]), float(x[1]))
    raise SpecError(f"{where}: expected a number or [re, im] pair")


def _require(doc, key, where=""):
    if not isinstance(doc, dict):
        raise SpecError(f"{where or 'document'}: expected an object")
    if key not in doc:
        raise SpecError(f"{where + '.' if where else ''}{key}: missing required key")
    return doc[key]


def _check_keys(doc, allowed, where):
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise SpecError(f"{where + '.' if where else ''}{extra[0]}: unknown key")


def _parse_grid(doc, weights):
    _check_keys(doc, {"kind", "a", "b", "samples", "points", "contractible", "locally_connected"},
                "parameter")
    kind = _require(doc, "kind", "parameter")
    flags = {}
    for key, attr in (("contractible", "contractible"), ("locally_connected", "locally_connected")):
        if key in doc:
            if not isinstance(doc[key], bool):
                raise SpecError(f"parameter.{key}: expected boolean")
            flags[attr] = doc[key]
    if weights is not None:
        if not isinstance(weights, list):
            raise SpecError("weights: expected a list")
        flags["weights"] = [float(_parse_complex(w, "weights").real) for w in weights]
    if kind == "interval":
        a = _parse_complex(_require(doc, "a", "parameter"), "parameter.a").real
        b = _parse_complex(_require(doc, "b", "parameter"), "parameter.b").real
        s = _require(doc, "samples", "parameter")
        if not isinstance(s, int) or isinstance(s, bool):
            raise SpecError("parameter.samples: expected integer")
        if "points" in doc:
            pts = [_parse_complex(x, "parameter.points") for x in doc["points"]]
            meta = {"a": a, "b": b, "samples": s, "restricted": True}
            return ParameterGrid(np.array(pts), "interval", meta=meta, **flags)
        return ParameterGrid.interval(a, b, s, **flags)
    if kind == "circle":
        s = _require(doc, "samples", "parameter")
        if not isinstance(s, int) or isinstance(s, bool):
            raise SpecError("parameter.samples: expected integer")
        if "points" in doc:
            pts = [_parse_complex(x, "parameter.points") for x in doc["points"]]
            flags.setdefault("contractible", False)
            return ParameterGrid(np.array(pts), "circle", meta={"samples": s, "restricted": True},
                                 **flags)
        return ParameterGrid.circle(s, **flags)
    if kind in ("explicit", "curve"):
        raw = _require(doc, "points", "parameter")
        if not isinstance(raw, list):
            raise SpecError("parameter.points: expected a list")
        pts = [_parse_complex(x, "parameter.points") for x in raw]
        return ParameterGrid(np.array(pts, dtype=complex), kind, **flags)
    raise SpecError(f"parameter.kind: unknown value {kind!r}")


def _parse_family(doc, name, K):
    if not isinstance(doc, dict):
        raise SpecError(f"{name}: expected an object")
    _check_keys(doc, {"kind", "entries"}, name)
    kind = _require(doc, "kind", name)
    entries = _require(doc, "entries", name)
    if not isinstance(entries, list) or not all(isinstance(r, list) for r in entries):
        raise SpecError(f"{name}.entries: expected a row-major matrix")
    if kind == "poly":
        coeffs = [[[_parse_complex(c, f"{name}.entries[{i}][{j}]") for c in _as_list(e, name, i, j)]
                   for j, e in enumerate(row)] for i, row in enumerate(entries)]
        return MatrixFamily.poly(coeffs)
    if kind == "samples":
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        stack = np.zeros((K, rows, cols), dtype=complex)
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise SpecError(f"{name}.entries: ragged matrix rows")
            for j, e in enumerate(row):
                vals = _as_list(e, name, i, j)
                if len(vals) != K:
                    raise SpecError(f"{name}.entries[{i}][{j}]: dimension mismatch "
                                    f"(expected {K} samples, got {len(vals)})")
                stack[:, i, j] = [_parse_complex(v, f"{name}.entries[{i}][{j}]") for v in vals]
        return MatrixFamily.samples(stack)
    raise SpecError(f"{name}.kind: unknown value {kind!r}")


def _as_list(e, name, i, j):
    if not isinstance(e, list):
        raise SpecError(f"{name}.entries[{i}][{j}]: expected a list")
    return e


_TOP_KEYS = {"parameter", "time", "field", "A", "B", "C", "weights", "target", "initial", "m"}


def load_ensemble(document) -> MatrixEnsemble:
    """Validate and build an ensemble from a parsed document (dict) or JSON text."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, dict):
        raise SpecError("document: expected an object")
    _check_keys(doc, _TOP_KEYS, "")
    grid = _parse_grid(_require(doc, "parameter"), doc.get("weights"))
    K = grid.K
    A = _parse_family(_require(doc, "A"), "A", K)
    B = _parse_family(_require(doc, "B"), "B", K)
    if A.rows == 0 and "m" in doc:
        B = MatrixFamily("poly", np.zeros((0, int(doc["m"]), 1), dtype=complex), 0, int(doc["m"]))
    C = _parse_family(doc["C"], "C", K) if doc.get("C") is not None else None
    time_kind = doc.get("time", "discrete")
    field_kind = doc.get("field", "complex")
    if time_kind not in TIME_KINDS:
        raise SpecError(f"time: unknown value {time_kind!r}")
    if field_kind not in FIELD_KINDS:
        raise SpecError(f"field: unknown value {field_kind!r}")
    return MatrixEnsemble(grid, A, B, C, time_kind, field_kind)


def _parse_vector_family(doc, name, K, n):
    if not isinstance(doc, dict):
        raise SpecError(f"{name}: expected an object")
    kind = _require(doc, "kind", name)
    entries = _require(doc, "entries", name)
    if not isinstance(entries, list) or len(entries) != n:
        raise SpecError(f"{name}.entries: expected {n} entries")
    fam = _parse_family({"kind": kind, "entries": [[e] for e in entries]}, name, K)
    return fam


def load_target(document, ensemble: MatrixEnsemble) -> Optional[TargetEnsemble]:
    """Read the optional ``target``/``initial`` keys; None when no target is given."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if "target" not in doc:
        return None
    K, n = ensemble.K, ensemble.n
    f = _parse_vector_family(doc["target"], "target", K, n).evaluate(ensemble.points)[:, :, 0]
    x0 = None
    if "initial" in doc:
        x0 = _parse_vector_family(doc["initial"], "initial", K, n).evaluate(ensemble.points)[:, :, 0]
    return TargetEnsemble(f, x0)


def _family_doc(fam: MatrixFamily):
    if fam.kind == "poly":
        d = fam.data
        entries = []
        for i in range(fam.rows):
            row = []
            for j in range(fam.cols):
                c = d[i, j]
                nz = np.nonzero(c)[0]
                c = c[:nz[-1] + 1] if nz.size else c[:1]
                row.append([_cnum(x) for x in c])
            entries.append(row)
        return {"kind": "poly", "entries": entries}
    return {"kind": "samples",
            "entries": [[[_cnum(x) for x in fam.data[i, j]] for j in range(fam.cols)]
                        for i in range(fam.rows)]}


def to_document(ensemble: MatrixEnsemble, target: Optional[TargetEnsemble] = None) -> dict:
    g = ensemble.grid
    par = {"kind": g.topology}
    default_contractible = g.topology != "circle"
    if g.contractible != default_contractible:
        par["contractible"] = g.contractible
    if not g.locally_connected:
        par["locally_connected"] = False
    if g.topology == "interval" and "a" in g.meta:
        par.update(a=g.meta["a"], b=g.meta["b"], samples=g.meta["samples"])
        if g.meta.get("restricted"):
            par["points"] = [_cnum(x) for x in g.points]
    elif g.topology == "circle" and "samples" in g.meta:
        par["samples"] = g.meta["samples"]
        if g.meta.get("restricted"):
            par["points"] = [_cnum(x) for x in g.points]
    elif g.topology in ("interval", "circle"):
        # grids built directly from points
        if g.topology == "interval":
            par.update(a=float(g.points[0].real), b=float(g.points[-1].real), samples=g.K)
        else:
            par["samples"] = g.K
        par["points"] = [_cnum(x) for x in g.points]
    else:
        par["points"] = [_cnum(x) for x in g.points]
    doc = {"parameter": par, "time": ensemble.time_kind, "field": ensemble.field_kind,
           "A": _family_doc(ensemble.A_family), "B": _family_doc(ensemble.B_family)}
    if ensemble.n == 0:
        doc["m"] = ensemble.m
    if ensemble.C_family is not None:
        doc["C"] = _family_doc(ensemble.C_family)
    if g.weights is not None:
        doc["weights"] = [float(w) for w in g.weights]
    if target is not None:
        doc["target"] = {"kind": "samples", "entries": [[_cnum(x) for x in target.values[:, i]]
                                                        for i in range(ensemble.n)]}
        if target.has_initial:
            doc["initial"] = {"kind": "samples",
                              "entries": [[_cnum(x) for x in target.initial[:, i]]
                                          for i in range(ensemble.n)]}
    return doc


def dumps_canonical(doc) -> str:
    """Canonical text: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def dump_ensemble(ensemble: MatrixEnsemble, target: Optional[TargetEnsemble] = None) -> str:
    return dumps_canonical(to_document(ensemble, target))
