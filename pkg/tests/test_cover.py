import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpvcert import CoverBox, certify_positive, derivative_bound
from lpvcert.errors import EmptyBoxError


def square(x):
    return x[0] ** 2 + 2.0


def test_positive_quadratic_is_certified():
    cert = certify_positive(square, CoverBox.from_intervals([(-1, 1)]), floor=1.0)
    assert cert.certified
    assert cert.cells_examined < 200


def test_zero_crossing_gives_witness():
    cert = certify_positive(lambda x: x[0] ** 2 - 0.25, CoverBox.from_intervals([(-1, 1)]), floor=0.1)
    assert cert.status == "witness"
    x = cert.witness_point[0]
    assert x ** 2 - 0.25 <= 0.1


def test_touching_floor_is_not_certified():
    cert = certify_positive(lambda x: x[0] ** 2 + 1.0, CoverBox.from_intervals([(-1, 1)]), floor=1.0, budget=2000)
    assert not cert.certified


def test_tiny_budget_is_inconclusive():
    cert = certify_positive(lambda x: np.cos(5 * x[0]) + 1.05, CoverBox.from_intervals([(0, 10)]), floor=0.01,
                            budget=5)
    assert cert.status == "inconclusive"
    assert cert.cells_examined == 5


def test_more_budget_never_loses_a_certificate():
    f = lambda x: np.sin(x[0]) * np.cos(x[1]) + 1.2
    box = CoverBox.from_intervals([(0, 3), (0, 3)])
    statuses = [certify_positive(f, box, 0.1, budget=b).status for b in (10, 100, 1000, 10_000)]
    seen = False
    for s in statuses:
        seen = seen or s == "certified"
        if seen:
            assert s == "certified"
    assert statuses[-1] == "certified"


def test_certified_function_is_positive_on_samples(rng):
    f = lambda x: np.sin(3 * x[0]) + np.cos(2 * x[1]) + 2.3
    box = CoverBox.from_intervals([(-2, 2), (-1, 1)])
    cert = certify_positive(f, box, 0.2)
    assert cert.certified
    X = box.sample(rng, 10_000)
    assert min(f(x) for x in X) >= 0.2


def test_records_recheck_and_log():
    buf = io.StringIO()
    cert = certify_positive(square, CoverBox.from_intervals([(-1, 1)]), 1.0, keep_records=True, log=buf)
    assert cert.recheck()
    lines = buf.getvalue().splitlines()
    assert len(lines) == cert.cells_examined == len(cert.records)
    assert {"anchor", "widths", "value", "bounds", "decrement"} <= set(json.loads(lines[0]))
    cert.records[0] = type(cert.records[0])(**{**cert.records[0].__dict__, "certified": True, "value": -5.0})
    assert not cert.recheck()


def test_uniform_mode_and_threads_agree():
    box = CoverBox.from_intervals([(-1, 1), (0, 2)])
    f = lambda x: x[0] ** 2 + x[1] + 1.0
    a = certify_positive(f, box, 0.5, mode="uniform")
    b = certify_positive(f, box, 0.5, mode="sum", jobs=4)
    assert a.certified and b.certified


def test_vectorized_matches_scalar():
    box = CoverBox.from_intervals([(-1, 1), (-1, 1)])
    f = lambda x: x[0] ** 2 + x[1] ** 2 + 0.5
    g = lambda X: (X ** 2).sum(axis=1) + 0.5
    a = certify_positive(f, box, 0.2)
    b = certify_positive(g, box, 0.2, vectorized=True)
    assert a.cells_examined == b.cells_examined and a.certified and b.certified


def test_degenerate_axis_is_allowed():
    cert = certify_positive(square, CoverBox.from_intervals([(0.5, 0.5)]), 1.0)
    assert cert.certified and cert.cells_examined == 1


def test_empty_or_inverted_box():
    with pytest.raises(EmptyBoxError):
        certify_positive(square, CoverBox((), ()), 1.0)
    with pytest.raises(EmptyBoxError):
        certify_positive(square, CoverBox.from_intervals([(1, 0)]), 1.0)
    with pytest.raises(ValueError):
        certify_positive(square, CoverBox.from_intervals([(0, 1)]), 0.0)


def test_derivative_bound_examples():
    box = CoverBox.from_intervals([(-1, 1), (0, 2)])
    assert derivative_bound(lambda x: 3 * x[0] - x[1], box, 0) == pytest.approx(6.0)
    assert derivative_bound(lambda x: x[1] ** 2, box, 1) == pytest.approx(8.0, rel=1e-3)
    assert derivative_bound(lambda x: x[1] ** 2, box, 0) == 0.0


@given(st.floats(0.1, 3), st.floats(-2, 2))
@settings(max_examples=20, deadline=None)
def test_affine_functions(slope, shift):
    f = lambda x: slope * (x[0] - shift) ** 2 + 0.5
    cert = certify_positive(f, CoverBox.from_intervals([(-3, 3)]), 0.25)
    assert cert.certified


def test_stationary_lattice_does_not_hide_a_zero():
    # every lattice node in phi is a stationary point of this function, and
    # the extra degenerate axes once shrank the lattice to the corners
    def f(X):
        X = np.atleast_2d(X)
        z = 1 - X[:, 4] * np.exp(-1j * X[:, 5])
        return 1 + np.log(np.maximum(np.abs(z) ** 2, 1e-300) / 1e-4)

    box = CoverBox((0, 0, 0, 0, 0.01, 0.0), (0, 0, 0, 0, 7.4, 2 * np.pi))
    cert = certify_positive(f, box, 1.0, budget=20_000, vectorized=True)
    assert not cert.certified
