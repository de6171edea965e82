import numpy as np
import pytest

from lpvcert import (
    BoxDomain,
    ChannelStructure,
    DeltaAssignment,
    LpvSystem,
    PerturbationStructure,
    bound_constants,
    check_property_at,
    construct_violation,
    dual,
    is_admissible,
    preservation_radius,
    verify_radius,
)
from lpvcert.errors import NominalAlreadyViolated, NominalPropertyFails, NotExpressible, ShapeMismatchError
from lpvcert.pbh import dual_delta
from lpvcert.robustness import stacked_norm

EMPTY = BoxDomain({})


def full(n, cols):
    return ChannelStructure(np.eye(cols), {(0, 1): np.eye(n)})


def scalar_system(b=1.0):
    pert = PerturbationStructure(A=full(1, 1), B=full(1, 1))
    return LpvSystem.from_matrices(-1.0, b, pert=pert)


def diag_system():
    pert = PerturbationStructure(A=full(2, 2), B=full(2, 1))
    return LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), pert=pert)


def test_scalar_constants():
    eps, dc0, omega = bound_constants(scalar_system(), EMPTY)
    assert (eps, dc0, omega) == pytest.approx((2.0, 18.0, 4.0))


def test_scalar_radius_formula():
    r = preservation_radius(scalar_system(), EMPTY)
    assert r.delta == pytest.approx(np.sqrt(326.0) - 18.0, rel=1e-12)
    assert r.block_bound == pytest.approx(r.delta / np.sqrt(2.0), rel=1e-12)
    assert r.delta == pytest.approx(0.0554700853, abs=1e-10)
    assert r.block_bound == pytest.approx(0.0392232734, abs=1e-10)


def test_larger_input_raises_lower_constant():
    eps, _, _ = bound_constants(scalar_system(10.0), EMPTY)
    assert eps == pytest.approx(101.0)


def test_nominal_failure_is_reported():
    with pytest.raises(NominalPropertyFails):
        preservation_radius(scalar_system(0.0), EMPTY)


def test_is_admissible_examples():
    sys = scalar_system()
    r = preservation_radius(sys, EMPTY)
    small = DeltaAssignment({"A": {(0, 1): np.array([[0.02]])}, "B": {(0, 1): np.array([[0.02]])}})
    big = DeltaAssignment({"A": {(0, 1): np.array([[0.05]])}, "B": {(0, 1): np.array([[0.0]])}})
    assert is_admissible(small, r, sys)
    assert not is_admissible(big, r, sys)
    with pytest.raises(ShapeMismatchError):
        is_admissible(DeltaAssignment({"A": {(0, 1): np.eye(2)}}), r, sys)
    with pytest.raises(ShapeMismatchError):
        is_admissible(DeltaAssignment({"A": {(0, 2): np.eye(1)}}), r, sys)


def test_violation_for_diagonal_example():
    sys = diag_system()
    w = construct_violation(sys, EMPTY)
    assert w.norm == pytest.approx(1.0)
    assert w.sigma_min <= 1e-8
    assert not check_property_at(sys, "controllability", w.point, w.delta).holds
    B_tilde = w.delta.get("B", 0, 1)
    assert np.allclose(np.abs(B_tilde.ravel()), [1.0, 0.0]) or np.allclose(np.abs(B_tilde.ravel()), [0.0, 1.0])
    r = preservation_radius(sys, EMPTY)
    assert w.norm > r.block_bound


def test_violation_needs_structure():
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]))
    with pytest.raises(NotExpressible):
        construct_violation(sys, EMPTY)
    # only a diagonal entry of A may move: the target directions are out of reach
    pert = PerturbationStructure(A=ChannelStructure(np.array([[1.0, 0.0]]), {(0, 1): np.array([[1.0], [0.0]])}))
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), pert=pert)
    with pytest.raises(NotExpressible):
        construct_violation(sys, EMPTY)


def test_violation_when_nominal_fails():
    pert = PerturbationStructure(A=full(2, 2), B=full(2, 1))
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [0.0]]), pert=pert)
    with pytest.raises(NominalAlreadyViolated):
        construct_violation(sys, EMPTY)


def test_observability_violation_uses_output_channel():
    pert = PerturbationStructure(A=full(2, 2), C=ChannelStructure(np.eye(2), {(0, 1): np.eye(1)}))
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.zeros((2, 1)), np.array([[1.0, 1.0]]), pert=pert)
    w = construct_violation(sys, EMPTY, "observability")
    assert not check_property_at(sys, "observability", w.point, w.delta).holds
    assert w.norm == pytest.approx(1.0)


def test_soundness_on_random_admissible(rng):
    sys = diag_system()
    r = preservation_radius(sys, EMPTY)
    rep = verify_radius(sys, EMPTY, r, rng, trials=100, points=5)
    assert rep.sound
    assert rep.checks == 500


def test_soundness_over_parameter_box(rng):
    from lpvcert import AffineFamily
    pert = PerturbationStructure(A=full(2, 2), B=full(2, 1))
    sys = LpvSystem(2, 1, 2, AffineFamily((np.diag([-1.0, -2.0]), np.diag([0.3, 0.0]))),
                    AffineFamily.constant(np.array([[1.0], [1.0]])), AffineFamily.constant(np.eye(2)),
                    AffineFamily.constant(np.zeros((2, 1))), pert)
    dom = BoxDomain.real(A=[(-1, 1)])
    r = preservation_radius(sys, dom)
    assert r.boundary_points == 2 and r.interior_points > 0
    rep = verify_radius(sys, dom, r, rng, trials=50, points=10)
    assert rep.sound


def test_duality_of_radius():
    pert = PerturbationStructure(A=full(2, 2), C=ChannelStructure(np.eye(2), {(0, 1): np.eye(1)}))
    sys = LpvSystem.from_matrices(np.array([[-1.0, 0.3], [0.0, -2.0]]), np.zeros((2, 1)),
                                  np.array([[1.0, 1.0]]), pert=pert)
    ro = preservation_radius(sys, EMPTY, "observability")
    rc = preservation_radius(dual(sys), EMPTY, "controllability")
    assert ro.delta == pytest.approx(rc.delta, abs=1e-12)
    assert ro.block_bound == pytest.approx(rc.block_bound, abs=1e-12)


def test_dual_delta_preserves_norm(rng):
    from lpvcert.model import random_delta
    pert = PerturbationStructure(A=full(2, 2), C=ChannelStructure(np.eye(2), {(0, 1): np.eye(1)}))
    sys = LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.zeros((2, 1)), np.array([[1.0, 1.0]]), pert=pert)
    d = random_delta({"A": pert.A, "C": pert.C}, rng)
    assert stacked_norm(sys, d, "observability") == pytest.approx(
        stacked_norm(dual(sys), dual_delta(sys, d), "controllability"))


def test_admissibility_examples_near_bound():
    sys = scalar_system()
    r = preservation_radius(sys, EMPTY)
    one = lambda a, b: DeltaAssignment({"A": {(0, 1): np.array([[a]])}, "B": {(0, 1): np.array([[b]])}})
    assert is_admissible(DeltaAssignment({}), r, sys)
    assert is_admissible(one(0.039, 0.0), r, sys)
    assert not is_admissible(one(1.0, 0.0), r, sys)


def minimal_system():
    pert = PerturbationStructure(A=full(2, 2), B=full(2, 1), C=ChannelStructure(np.eye(2), {(0, 1): np.eye(1)}))
    return LpvSystem.from_matrices(np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), np.array([[1.0, 0.5]]),
                                   pert=pert)


def test_minimality_radius_is_tighter_side(rng):
    sys = minimal_system()
    rm = preservation_radius(sys, EMPTY, "minimality")
    rc = preservation_radius(sys, EMPTY, "controllability")
    ro = preservation_radius(sys, EMPTY, "observability")
    assert rm.block_bound == min(rc.block_bound, ro.block_bound)
    assert set(rm.components) == {"controllability", "observability"}
    assert verify_radius(sys, EMPTY, rm, rng, trials=50, points=1).sound


def test_minimality_violation_takes_smaller_side():
    sys = minimal_system()
    w = construct_violation(sys, EMPTY, "minimality")
    assert not check_property_at(sys, "minimality", w.point, w.delta).holds
    assert w.norm == min(construct_violation(sys, EMPTY, p).norm for p in ("controllability", "observability"))
