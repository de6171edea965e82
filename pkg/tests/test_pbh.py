import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpvcert import (
    AffineFamily,
    BoxDomain,
    LpvSystem,
    ParameterPoint,
    Property,
    Verdict,
    ZeroKind,
    check_property_at,
    classify_zeros,
    dual,
    sweep_domain,
)
from lpvcert.errors import MissingSGridError, UnboundedDomainError
from lpvcert.linalg import numerical_rank
from lpvcert.pbh import PbhKind, assemble_pbh, check_matrices, dual_point, margin_value


def kalman_rank(A, B):
    n = A.shape[0]
    blocks, M = [], B
    for _ in range(n):
        blocks.append(M)
        M = A @ M
    return numerical_rank(np.hstack(blocks), 1e-10)


def lti(A, B, C=None, D=None):
    return LpvSystem.from_matrices(np.asarray(A, float), np.asarray(B, float), C, D)


def test_controllable_double_integrator():
    sys = lti([[0, 1], [0, 0]], [[0], [1]])
    v = check_property_at(sys, "controllability")
    assert v.holds and v.min_ratio > 0.1
    assert v.loci_tested == 2


def test_uncontrollable_mode_gives_witness():
    sys = lti([[-1, 0], [0, -2]], [[1], [0]])
    v = check_property_at(sys, "controllability")
    assert not v.holds
    assert v.witnesses[0].s == pytest.approx(-2)
    # the mode is stable, so stabilizability survives
    assert check_property_at(sys, "stabilizability").holds


def test_unstable_uncontrollable_mode_is_not_stabilizable():
    sys = lti([[1.0]], [[0.0]])
    assert not check_property_at(sys, Property.STABILIZABILITY).holds


def test_observability_witness_is_in_primal_coordinates():
    A = np.array([[1j, 0], [0, 2.0]])
    sys = LpvSystem.from_matrices(A, np.eye(2), np.array([[0.0, 1.0]]))
    v = check_property_at(sys, "observability")
    assert not v.holds
    s = v.witnesses[0].s
    assert s == pytest.approx(1j)
    Z = assemble_pbh(sys, PbhKind.OBSERVABILITY, s, sys.origin())
    assert np.linalg.svd(Z, compute_uv=False).min() < 1e-12


def test_detectability_ignores_stable_modes():
    sys = LpvSystem.from_matrices(np.diag([-1.0, 2.0]), np.eye(2), np.array([[0.0, 1.0]]))
    assert not check_property_at(sys, "observability").holds
    assert check_property_at(sys, "detectability").holds


def test_minimality_combines_both_sides():
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), np.array([[1.0, 0.0]]))
    v = check_property_at(sys, "minimality")
    assert not v.holds


def test_output_controllability_needs_s_grid_when_c_rank_deficient():
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.eye(2), np.array([[1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(MissingSGridError):
        check_property_at(sys, "output_controllability")
    v = check_property_at(sys, "output_controllability", s_grid=[0, 1j])
    assert not v.exhaustive


def test_output_controllability_full_rank_output():
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), np.array([[1.0, 0.0]]))
    assert check_property_at(sys, "output_controllability").holds


def test_zero_classification():
    A = np.diag([1.0, 2.0])
    sys = LpvSystem.from_matrices(A, np.array([[1.0], [0.0]]), np.array([[1.0, 1.0]]))
    kinds = classify_zeros(sys, 2.0, sys.origin())
    assert ZeroKind.INPUT_DECOUPLING in kinds
    assert ZeroKind.OUTPUT_DECOUPLING not in kinds
    assert ZeroKind.TRANSMISSION not in kinds
    assert ZeroKind.INVARIANT in kinds
    assert classify_zeros(sys, 5.0, sys.origin()) == set()


def test_transmission_zero():
    # system matrix [[s+1, -1], [1, 1]] vanishes at s = -2
    sys = LpvSystem.from_matrices(-1.0, 1.0, 1.0, 1.0)
    kinds = classify_zeros(sys, -2.0, sys.origin())
    assert kinds == {ZeroKind.INVARIANT, ZeroKind.TRANSMISSION}


def test_input_output_decoupling_zero():
    sys = LpvSystem.from_matrices(np.diag([-1.0, -3.0]), np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]]))
    kinds = classify_zeros(sys, -3.0, sys.origin())
    assert {ZeroKind.INPUT_DECOUPLING, ZeroKind.OUTPUT_DECOUPLING, ZeroKind.INPUT_OUTPUT_DECOUPLING} <= kinds


@given(st.integers(0, 100_000))
@settings(max_examples=80, deadline=None)
def test_agrees_with_kalman_rank(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 5), rng.integers(1, 3)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    if rng.uniform() < 0.5 and n > 1:
        k = int(rng.integers(1, n))
        A[k:, :k] = 0
        B[k:, :] = 0
        T = rng.standard_normal((n, n)) + 3 * np.eye(n)
        A = T @ A @ np.linalg.inv(T)
        B = T @ B
    v = check_matrices(Property.CONTROLLABILITY, A, B, np.zeros((1, n)), np.zeros((1, m)))
    if 1e-9 < v.min_ratio < 1e-7:
        return
    assert v.holds == (kalman_rank(A, B) == n)


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_duality_of_verdicts(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    C = rng.standard_normal((1, n)) + 1j * rng.standard_normal((1, n))
    if rng.uniform() < 0.5:
        A[:, 0] = 0
        A[0, 0] = 1j
        C[:, 0] = 0
    sys = LpvSystem.from_matrices(A, np.zeros((n, 1)), C)
    vo = check_property_at(sys, "observability")
    vc = check_property_at(dual(sys), "controllability", dual_point(sys.origin()))
    assert vo.holds == vc.holds
    assert vo.min_ratio == pytest.approx(vc.min_ratio, abs=1e-12)


def test_margin_value_positive_iff_holds(rng):
    for _ in range(30):
        A = rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 1)) * (rng.uniform() < 0.7)
        C, D = np.zeros((1, 3)), np.zeros((1, 1))
        for prop in ("controllability", "stabilizability"):
            v = check_matrices(Property.parse(prop), A, B, C, D)
            assert (margin_value(prop, A, B, C, D) > 1e-8) == v.holds


def affine_uncontrollable():
    return LpvSystem(
        2, 1, 1,
        AffineFamily((np.diag([-1.0, -2.0]), np.diag([0.5, 0.0]))),
        AffineFamily.constant(np.array([[1.0], [0.0]])),
        AffineFamily.constant(np.zeros((1, 2))),
        AffineFamily.constant(np.zeros((1, 1))),
    )


def test_sweep_finds_violation():
    rep = sweep_domain(affine_uncontrollable(), "controllability", BoxDomain.real(A=[(-1, 1)]))
    assert rep.verdict is Verdict.VIOLATED
    assert rep.witnesses


def test_sweep_certifies_with_cover():
    sys = LpvSystem(
        2, 1, 1,
        AffineFamily((np.array([[0.0, 1.0], [-1.0, -1.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))),
        AffineFamily.constant(np.array([[0.0], [1.0]])),
        AffineFamily.constant(np.zeros((1, 2))),
        AffineFamily.constant(np.zeros((1, 1))),
    )
    rep = sweep_domain(sys, "controllability", BoxDomain.real(A=[(-0.5, 0.5)]), certify=True)
    assert rep.verdict is Verdict.CERTIFIED
    assert rep.method == "cover" and rep.certificate.certified
    assert rep.refinement_depth == 2


def test_sweep_budget_too_small_is_inconclusive():
    sys = lti([[0, 1], [0, 0]], [[0], [1]])
    dom = BoxDomain.real(A=[(-1, 1)])
    sys = LpvSystem(2, 1, 2, AffineFamily((sys.famA.coeffs[0], np.eye(2))), sys.famB, sys.famC, sys.famD)
    rep = sweep_domain(sys, "controllability", dom, budget=3)
    assert rep.verdict is Verdict.INCONCLUSIVE
    assert rep.notes


def test_sweep_rejects_unbounded_domain():
    with pytest.raises(UnboundedDomainError):
        sweep_domain(affine_uncontrollable(), "controllability", BoxDomain.real(A=[(-np.inf, 1)]))


def test_parallel_sweep_matches_serial():
    sys = affine_uncontrollable()
    dom = BoxDomain.real(A=[(-1, 1)])
    a = sweep_domain(sys, "stabilizability", dom, grid=300)
    b = sweep_domain(sys, "stabilizability", dom, grid=300, jobs=2)
    assert a.verdict == b.verdict and a.min_ratio == b.min_ratio and a.points_tested == b.points_tested


def test_complex_parameter_point():
    sys = LpvSystem(1, 1, 1, AffineFamily((np.array([[0.0]]), np.array([[1.0]]))),
                    AffineFamily((np.array([[1.0]]), np.array([[1.0]]))),
                    AffineFamily.constant(np.zeros((1, 1))), AffineFamily.constant(np.zeros((1, 1))))
    # B vanishes at zB = -1
    pt = ParameterPoint(zA=(1j,), zB=(-1,))
    assert not check_property_at(sys, "controllability", pt).holds
