import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from ensemble_reach.canonical import controllability_form
from ensemble_reach.model import MatrixEnsemble, ParameterGrid, parallel_compose
from ensemble_reach.spectral import (SpectralError, curve_dilation, curves_to_csv, decompose,
                                     eigen_curves, enclosing_circle, group_selections,
                                     is_nonseparating, projection_residuals, spectral_projections,
                                     trivial_grouping)

from helpers import two_cluster_ensemble


def _diag_shift(K=11):
    g = ParameterGrid.interval(0, 1, K)
    return MatrixEnsemble.from_poly(g, [[[0, 1], [0]], [[0], [2, 1]]], [[[1]], [[1]]])


def test_curves_diagonal():
    fam = eigen_curves(_diag_shift())
    th = np.linspace(0, 1, 11)
    assert np.allclose(fam.curves[0], th) and np.allclose(fam.curves[1], th + 2)
    assert np.all(fam.geometric_mults == 1) and np.all(fam.multiplicities == 1)


def test_curves_oscillator_double_root_at_zero():
    g = ParameterGrid.interval(0, 1, 11)
    e = MatrixEnsemble.from_poly(g, [[[0], [0, 0, -1]], [[1], [0]]], [[[1]], [[0]]])
    fam = eigen_curves(e)
    th = g.points.real
    # oracle: roots of z^2 + theta^2
    for i, t in enumerate(th):
        r = np.roots([1, 0, t * t])
        ri, ci = linear_sum_assignment(np.abs(fam.curves[:, i][:, None] - r[None, :]))
        assert np.max(np.abs(fam.curves[ri, i] - r[ci])) < 1e-12
    assert fam.multiplicities[0].tolist() == [2, 2]
    assert fam.geometric_mults[0].tolist() == [1, 1]
    assert np.all(fam.multiplicities[1:] == 1)


def test_curves_jordan_block():
    g = ParameterGrid.interval(0, 1, 5)
    e = MatrixEnsemble.from_poly(g, [[[0, 1], [1]], [[0], [0, 1]]], [[[0]], [[1]]])
    fam = eigen_curves(e)
    assert np.allclose(fam.curves, g.points.real)
    assert np.all(fam.multiplicities == 2) and np.all(fam.geometric_mults == 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_curve_matching_reverses(seed):
    # complex data: real matrices produce exact ties where conjugate pairs split
    e, _ = two_cluster_ensemble(seed, K=15, complex_=True)
    rev = MatrixEnsemble.from_arrays(ParameterGrid.explicit(e.points[::-1], topology="curve"),
                                     e.A[::-1], e.B[::-1])
    f1, f2 = eigen_curves(e), eigen_curves(rev)
    # same set of curves up to relabelling
    cost = np.array([[np.max(np.abs(a - b[::-1])) for b in f2.curves] for a in f1.curves])
    r, c = linear_sum_assignment(cost)
    assert cost[r, c].max() < 1e-9


def test_group_selections_examples(mixed3):
    g = group_selections(eigen_curves(_diag_shift()), 0.5)
    assert g.groups == [[0], [1]] and np.isclose(g.min_gap(), 1.0)
    gn = ParameterGrid.interval(0, 1, 11)
    e = MatrixEnsemble.from_poly(gn, [[[0, 1], [0]], [[0], [0, -1]]], [[[1]], [[1]]])
    assert group_selections(eigen_curves(e), 1e-9).k == 1
    g3 = group_selections(eigen_curves(mixed3), 1e-6)
    fam = g3.family
    osc = [j for j in range(3) if abs(fam.curves[j, 0]) < 1e-12]
    assert sorted(map(sorted, g3.groups)) == sorted([sorted(osc), [3 - sum(osc)]])
    # oracle: distance between the segment [-i, i] and [1, 2]
    assert np.isclose(g3.min_gap(), 1.0)


def test_projection_diagonal():
    e = _diag_shift()
    dec = spectral_projections(e, group_selections(eigen_curves(e), 0.5))
    assert np.allclose(dec.projections[0], np.diag([1, 0]), atol=1e-10)
    triv = spectral_projections(e, trivial_grouping(eigen_curves(e)))
    assert np.allclose(triv.projections[0], np.eye(2), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_projections_match_eigenvector_oracle(seed):
    e, P1 = two_cluster_ensemble(seed)
    grp = group_selections(eigen_curves(e), 5.0 / 3)
    assert grp.k == 2
    dec = spectral_projections(e, grp)
    first = [gi for gi in range(2) if np.real(grp.cloud(gi)).mean() < 2.5][0]
    assert np.max(np.abs(dec.projections[first] - P1)) < 1e-8
    res = projection_residuals(e, dec)
    assert max(res.values()) < 1e-7
    assert np.all(dec.ranks.sum(axis=0) == 4)


def test_quadrature_converges_geometrically():
    e, _ = two_cluster_ensemble(3)
    grp = group_selections(eigen_curves(e), 5.0 / 3)
    errs = []
    for N in (8, 16, 32):
        errs.append(projection_residuals(e, spectral_projections(e, grp, N))["idempotent"])
    assert errs[1] <= max(errs[0] / 10, 1e-12) and errs[2] <= max(errs[1] / 10, 1e-12)


def test_contours_overlap_error():
    fam = eigen_curves(_diag_shift())
    grp = group_selections(fam, 0.5)
    bad = type(grp)(grp.groups, np.zeros_like(grp.gaps), grp.gap_tol, fam)
    with pytest.raises(SpectralError, match="contours overlap"):
        spectral_projections(_diag_shift(), bad)


def test_decompose_paper_example(mixed3):
    grp = group_selections(eigen_curves(mixed3), 1e-6)
    dec, subs = decompose(mixed3, grp)
    dims = sorted(s.n for s in subs)
    assert dims == [1, 2]
    two = next(s for s in subs if s.n == 2)
    one = next(s for s in subs if s.n == 1)
    th = mixed3.points.real
    assert np.allclose(one.A[:, 0, 0], th ** 2 + 1, atol=1e-9)
    # transfer invariant: char coefficients of the 2x2 block are (-theta^2, 0)
    cf = controllability_form(two)
    assert np.allclose(cf.char_coeffs[:, 0], -th ** 2, atol=1e-7)
    assert np.allclose(cf.char_coeffs[:, 1], 0, atol=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_decompose_recovers_composed_blocks(seed):
    e1, _ = two_cluster_ensemble(seed, n2=1)
    g = e1.grid
    rng = np.random.default_rng(seed + 100)
    c = rng.normal(size=2)
    e2 = MatrixEnsemble.from_poly(g, [[[10 + c[0], c[1]]]], [[[1]]])
    comp = parallel_compose(e1, e2)
    fam = eigen_curves(comp)
    grp = group_selections(fam, 1e-6 * fam.diameter())
    dec, subs = decompose(comp, grp)
    for sub in subs:
        for i in range(comp.K):
            lam = np.linalg.eigvals(sub.A[i])
            full = np.linalg.eigvals(comp.A[i])
            assert np.min(np.abs(full[:, None] - lam[None, :]), axis=0).max() < 1e-6
    # T is invertible and B_i stack reproduces T^{-1} B
    T = dec.transform_curves
    for i in range(comp.K):
        stacked = np.concatenate([b[i] for b in dec.sub_inputs], axis=0)
        assert np.allclose(T[i] @ stacked, comp.B[i])


def test_decompose_scalar():
    g = ParameterGrid.interval(0, 1, 5)
    e = MatrixEnsemble.from_poly(g, [[[1, 1]]], [[[2]]])
    dec, subs = decompose(e, trivial_grouping(eigen_curves(e)))
    assert np.allclose(np.abs(dec.transform_curves), 1)
    assert np.allclose(subs[0].A, e.A)


def test_decompose_needs_contractible():
    g = ParameterGrid.circle(8)
    e = MatrixEnsemble.from_poly(g, [[[0, 1]]], [[[1]]])
    with pytest.raises(SpectralError, match="contractible"):
        decompose(e, trivial_grouping(eigen_curves(e)))


def test_circle_monodromy():
    g = ParameterGrid.circle(16)
    e = MatrixEnsemble.from_poly(g, [[[0, 1], [0]], [[0], [0, -1]]], [[[1]], [[1]]])
    fam = eigen_curves(e)
    assert fam.monodromy is not None and sorted(fam.monodromy) == [0, 1]


def test_nonseparating_examples():
    seg = np.linspace(0, 1, 100)
    assert is_nonseparating(seg, 0.02)
    circ = np.exp(2j * np.pi * np.arange(400) / 400)
    assert not is_nonseparating(circ, 0.02)
    two = np.concatenate([seg, seg + 2j])
    assert is_nonseparating(two, 0.02)
    with pytest.raises(ValueError):
        is_nonseparating(seg, 0.02, resolution=4)
    with pytest.raises(ValueError):
        is_nonseparating(seg, 0.0)


def test_dilation_bridges_samples():
    circ = np.exp(2j * np.pi * np.arange(64) / 64)
    d = curve_dilation(circ[None], closed=True)
    assert d > 0.5 * abs(circ[1] - circ[0])
    assert not is_nonseparating(circ, d)


def test_enclosing_circle_oracle(rng):
    pts = rng.normal(size=50) + 1j * rng.normal(size=50)
    c, r = enclosing_circle(pts)
    assert np.all(np.abs(pts - c) <= r * (1 + 1e-9))
    # minimality: at least two points on the boundary
    assert np.sum(np.isclose(np.abs(pts - c), r, rtol=1e-9)) >= 2


def test_csv_layout():
    text = curves_to_csv(eigen_curves(_diag_shift(3)))
    lines = text.strip().split("\n")
    assert lines[0] == "theta_re,theta_im,lambda1_re,lambda1_im,lambda2_re,lambda2_im"
    assert len(lines) == 4
    assert [float(x) for x in lines[2].split(",")] == [0.5, 0, 0.5, 0, 2.5, 0]
