import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensemble_reach.certify import (CertificationReport, Condition, Tolerances, certify_jordan,
                                    certify_lq, certify_output, certify_scalar,
                                    certify_uniform_necessary, certify_uniform_sufficient,
                                    kernel_witness, output_moment_rank)
from ensemble_reach.model import MatrixEnsemble, ParameterGrid, restrict

from helpers import finite_reachable_oracle, random_integer_pairs


def _scalar(fa, fb, K=201, a=-1.0, b=1.0):
    g = ParameterGrid.interval(a, b, K)
    th = g.points.real
    return MatrixEnsemble.from_arrays(g, fa(th)[:, None, None] + 0j, fb(th)[:, None, None] + 0j)


def _verdicts(rep):
    return {c.name: c.verdict for c in rep.conditions}


def test_scalar_examples():
    assert certify_scalar(_scalar(lambda t: t, np.ones_like)).verdict == "pass"
    rep = certify_scalar(_scalar(lambda t: t ** 2, np.ones_like))
    assert rep.verdict == "fail"
    assert "collisions" in rep.conditions[0].witness
    rep = certify_scalar(_scalar(lambda t: t, lambda t: t))
    assert rep.verdict == "fail" and "b_vanishes" in rep.conditions[0].witness
    with pytest.raises(ValueError, match="n must be 1"):
        certify_scalar(MatrixEnsemble.from_arrays(ParameterGrid.explicit([0.0]), np.eye(2)[None],
                                                  np.ones((1, 2, 1))))


def test_scalar_circle_not_contractible_is_inconclusive():
    g = ParameterGrid.circle(64)
    z = g.points
    e = MatrixEnsemble.from_arrays(g, z[:, None, None], np.ones((64, 1, 1)))
    assert certify_scalar(e).verdict == "inconclusive"
    # winding z -> z on the circle is injective; declaring contractible flips it
    g2 = ParameterGrid(g.points, "circle", contractible=True)
    assert certify_scalar(MatrixEnsemble.from_arrays(g2, z[:, None, None],
                                                     np.ones((64, 1, 1)))).verdict == "pass"


def test_oscillator_block_composition_via_decomposition(mixed3):
    rep = certify_uniform_sufficient(mixed3)
    v = _verdicts(rep)
    assert rep.overall_necessary == "pass"
    assert rep.overall_sufficient == "pass"
    assert rep.route == "R3"
    assert v["R2_constant_coefficients"] == "fail"
    assert v["R3_spectral_decomposition"] == "pass"
    # the components on their own
    from conftest import mixed3_blocks
    osc, scal = mixed3_blocks(21)
    assert certify_uniform_sufficient(osc).route == "R2"
    assert certify_uniform_sufficient(scal).route == "R1"


def test_diag_pm_theta_fails_uniform_but_passes_lq_necessary():
    g = ParameterGrid.interval(-1, 1, 201)
    th = g.points.real
    A = np.zeros((201, 2, 2))
    A[:, 0, 0], A[:, 1, 1] = th, -th
    e = MatrixEnsemble.from_arrays(g, A, np.ones((201, 2, 1)))
    rep = certify_uniform_necessary(e)
    assert rep.overall_necessary == "fail"
    fails = [c.name for c in rep.conditions if c.verdict == "fail"]
    assert "a_pointwise_reachable" in fails and "c_cross_parameter_disjoint" in fails
    assert rep.condition("a_pointwise_reachable").witness["indices"] == [100]
    assert certify_lq(e, 2.0, Tolerances(allow_isolated=True)).overall_necessary == "pass"
    assert certify_lq(e, 2.0).overall_necessary == "fail"


def test_lq_scalar_square_fails_univalence():
    rep = certify_lq(_scalar(lambda t: t ** 2, np.ones_like), 2.0, Tolerances(allow_isolated=True))
    assert rep.overall_necessary == "fail"
    assert _verdicts(rep)["lq_scalar_essentially_univalent"] == "fail"


def test_lq_sufficiency_only_through_uniform():
    rep = certify_lq(_scalar(lambda t: t, np.ones_like), 3.0)
    assert rep.verdict == "pass" and rep.route == "uniform:R1"
    assert rep.tolerances["q"] == 3.0
    with pytest.raises(ValueError, match="q must be"):
        certify_lq(_scalar(lambda t: t, np.ones_like), 0.5)


def test_two_input_scalar_example_is_inconclusive():
    g = ParameterGrid.interval(-1, 1, 101)
    th = g.points.real
    B = np.stack([np.ones(101), th], axis=1)[:, None, :]
    e = MatrixEnsemble.from_arrays(g, (th ** 2)[:, None, None], B)
    rep = certify_uniform_sufficient(e)
    assert rep.overall_necessary == "pass"
    assert rep.overall_sufficient == "inconclusive"
    assert "subpair" in rep.condition("R5_hermite").witness["reason"]


def test_triangular_route():
    g = ParameterGrid.interval(0, 1, 31)
    th = g.points.real
    A = np.zeros((31, 2, 2))
    A[:, 0, 0], A[:, 0, 1], A[:, 1, 1] = th, 1.0, 2 + th ** 2
    B = np.tile(np.array([[1.0, 1.0], [0.0, 1.0]]), (31, 1, 1))
    rep = certify_uniform_sufficient(MatrixEnsemble.from_arrays(g, A, B))
    assert rep.verdict == "pass"
    assert _verdicts(rep)["R6_triangular"] == "pass"


def test_hermite_route_with_constant_indices():
    g = ParameterGrid.interval(0, 1, 31)
    th = g.points.real
    A = np.zeros((31, 2, 2))
    A[:, 0, 0], A[:, 1, 1] = th, 3 + th
    B = np.tile(np.eye(2), (31, 1, 1))
    A[:, 0, 1] = 0.5
    # lower entry breaks the triangular route, Hermite indices stay (1, 1)
    A[:, 1, 0] = 0.25
    rep = certify_uniform_sufficient(MatrixEnsemble.from_arrays(g, A, B))
    v = _verdicts(rep)
    assert v["R6_triangular"] == "fail"
    assert rep.overall_sufficient == "pass"
    assert rep.route == "R5"


def test_arc_route_simple_spectrum():
    g = ParameterGrid.interval(0, 1, 41)
    th = g.points.real
    A = np.zeros((41, 2, 2))
    A[:, 0, 0], A[:, 1, 1] = th, 2 + th
    A[:, 0, 1] = th
    b = np.ones((41, 2, 1))
    rep = certify_uniform_sufficient(MatrixEnsemble.from_arrays(g, A, b))
    assert _verdicts(rep)["R4_arc_simple_spectrum"] == "pass"
    assert rep.verdict == "pass"


def test_jordan_examples():
    g = ParameterGrid.interval(0, 1, 21)
    th = g.points.real
    A = np.zeros((21, 2, 2))
    A[:, 0, 0] = A[:, 1, 1] = th
    A[:, 0, 1] = 1
    good = MatrixEnsemble.from_arrays(g, A, np.tile(np.eye(2), (21, 1, 1)))
    assert certify_jordan(good).verdict == "pass"
    bad = MatrixEnsemble.from_arrays(g, A, np.tile(np.array([[0.0], [1.0]]), (21, 1, 1)))
    rep = certify_jordan(bad)
    assert rep.verdict == "fail" and rep.conditions[0].witness["rank_B"] == 1
    # a finite set does not support the rank argument
    fin = MatrixEnsemble.from_arrays(ParameterGrid.explicit([0.0, 1.0]), A[[0, -1]],
                                     np.tile(np.array([[0.0], [1.0]]), (2, 1, 1)))
    assert certify_jordan(fin).verdict == "inconclusive"
    assert finite_reachable_oracle(np.array([[[0, 1], [0, 0]], [[1, 1], [0, 1]]]),
                                   np.array([[[0], [1]]] * 2))
    A2 = A.copy()
    A2[:, 1, 0] = 1
    with pytest.raises(ValueError, match="upper triangular"):
        certify_jordan(MatrixEnsemble.from_arrays(g, A2, np.tile(np.eye(2), (21, 1, 1))))


def test_kernel_witness():
    g = ParameterGrid.interval(-1, 1, 21)
    th = g.points.real
    A = np.zeros((21, 2, 2))
    A[:, 0, 0], A[:, 1, 1] = th, -th
    e = MatrixEnsemble.from_arrays(g, A, np.ones((21, 2, 1)))
    kw = kernel_witness(e)
    assert kw.deficiency_set == [10]
    xi = kw.xi[10]
    assert np.isclose(np.linalg.norm(xi), 1)
    assert np.allclose(xi.conj() @ np.hstack([e.B[10], e.A[10] @ e.B[10]]), 0, atol=1e-12)
    assert abs(xi[0].imag) < 1e-15 and xi[0].real > 0
    assert np.allclose(np.delete(kw.xi, 10, axis=0), 0)


def test_output_moment_rank_and_certify_output(mixed3):
    C = np.zeros((mixed3.K, 1, 3))
    C[:, 0, 0] = 1
    from ensemble_reach.model import MatrixFamily
    e = mixed3.with_families(C=MatrixFamily.samples(C))
    mm = output_moment_rank(e)
    assert mm.rank == 1 and mm.k_max == 3 * 1 + 1 and mm.verdict == "pass"
    # direct quadrature oracle for the first moments
    w = e.grid.quadrature_weights
    ref0 = sum(w[i] * (C[i] @ e.B[i]) for i in range(e.K))
    assert np.allclose(mm.columns[:, :1], ref0)
    rep = certify_output(e)
    assert rep.verdict == "pass"
    assert _verdicts(rep)["output_pointwise_rank"] == "pass"
    zero = e.with_families(C=MatrixFamily.samples(np.zeros_like(C)))
    assert certify_output(zero).verdict == "fail"
    with pytest.raises(ValueError, match="no output matrix"):
        output_moment_rank(mixed3)


def test_report_invariant_and_document(mixed3):
    rep = certify_uniform_sufficient(mixed3)
    doc = json.loads(json.dumps(rep.to_document()))
    assert doc["route"] == "R3" and doc["verdict"] == "pass"
    assert set(doc["tolerances"]) >= {"rank", "spec", "measure"}
    with pytest.raises(AssertionError):
        CertificationReport([Condition("x", "necessary", "fail")], "fail", "pass")


def test_single_point_grid_matches_kalman(rng):
    for _ in range(20):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        A = rng.normal(size=(1, n, n))
        B = rng.normal(size=(1, n, m))
        if rng.random() < 0.4:
            B[0, 0] = 0
            A[0, 0, 1:] = 0
            A[0, 1:, 0] = 0
        e = MatrixEnsemble.from_arrays(ParameterGrid.explicit([0.5]), A, B)
        kal = np.linalg.matrix_rank(np.hstack([np.linalg.matrix_power(A[0], k) @ B[0]
                                               for k in range(n)])) == n
        assert certify_uniform_sufficient(e).verdict == ("pass" if kal else "fail")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), K=st.integers(1, 4), n=st.integers(1, 3),
       m=st.integers(1, 2))
def test_finite_sets_never_contradict_exact_oracle(seed, K, n, m):
    rng = np.random.default_rng(seed)
    As, Bs = random_integer_pairs(rng, K, n, m)
    e = MatrixEnsemble.from_arrays(ParameterGrid.explicit(np.arange(K) + 0.0), As, Bs)
    truth = finite_reachable_oracle(As, Bs)
    rep = certify_uniform_sufficient(e)
    if rep.overall_sufficient == "pass":
        assert truth
    if not truth:
        assert rep.overall_necessary == "fail"
    if rep.overall_necessary == "fail":
        assert not truth


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), keep=st.integers(1, 30))
def test_restriction_never_worsens_verdict(seed, keep):
    rng = np.random.default_rng(seed)
    K = 31
    g = ParameterGrid.interval(0, 1, K)
    th = g.points.real
    c = rng.normal(size=3)
    a = c[0] + c[1] * th + c[2] * th ** 2
    e = MatrixEnsemble.from_arrays(g, a[:, None, None], np.ones((K, 1, 1)))
    idx = np.sort(rng.choice(K, keep, replace=False))
    full = certify_uniform_sufficient(e)
    sub = certify_uniform_sufficient(restrict(e, idx))
    if full.verdict == "pass":
        assert sub.verdict == "pass"
    if sub.verdict == "fail":
        assert full.verdict == "fail"


def test_monotone_in_rank_tolerance():
    e = _scalar(lambda t: t, lambda t: 1e-6 + 0 * t)
    loose = certify_uniform_necessary(e, Tolerances(rank=1e-9))
    strict = certify_uniform_necessary(e, Tolerances(rank=0.5))
    assert loose.overall_necessary == "pass"
    assert strict.overall_necessary in ("pass", "fail")
    # rank ratios are scale invariant, so a constant tiny b is still reachable
    assert strict.condition("a_pointwise_reachable").verdict == "pass"


def test_nonseparating_failure_blocks_r3():
    # two groups; the first traces a full circle of eigenvalues +-i e^{i theta}
    K = 65
    g = ParameterGrid.interval(0, 2 * np.pi, K)
    th = g.points.real
    A = np.zeros((K, 2, 2), dtype=complex)
    A[:, 0, 0] = np.exp(1j * th * (K - 2) / (K - 1))
    A[:, 1, 1] = 6.0 + 0.1 * th
    rep = certify_uniform_sufficient(MatrixEnsemble.from_arrays(g, A, np.ones((K, 2, 1))))
    r3 = rep.condition("R3_spectral_decomposition")
    assert r3.verdict == "fail"
    assert "separates" in r3.witness["reason"]
