import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpvcert import BoxDomain, ChannelStructure, DelaySystem, LpvSystem, PerturbationStructure, sweep_domain
from lpvcert.errors import ParseError, ValidationError
from lpvcert.io import (
    clean,
    delta_from_dict,
    delta_to_dict,
    domain_report_from_dict,
    domain_report_to_dict,
    dump_system,
    dumps_report,
    load_document,
    load_system,
    parse_domain,
    parse_matrix,
    render_text,
    system_from_dict,
    system_to_dict,
)
from lpvcert.model import DeltaAssignment


def test_parse_matrix_entries():
    M = parse_matrix([[1, [2, -1]], [0.5, [0, 3]]])
    assert M[0, 1] == 2 - 1j and M[1, 1] == 3j
    assert parse_matrix(4).shape == (1, 1)
    with pytest.raises(ParseError, match="famA"):
        parse_matrix([[1, 2], [3]], "famA")
    with pytest.raises(ParseError):
        parse_matrix([[True]])


def test_missing_input_matrix_names_field():
    with pytest.raises(ValidationError) as err:
        load_system("tests/data/missing_input.json")
    assert err.value.location == "famB"
    assert "famB" in str(err.value)


def test_shape_error_names_coefficient():
    doc = {"famA": [[[0, 1], [0, 0]], [[1, 0]]], "famB": [[[0], [1]]]}
    with pytest.raises(ValidationError, match=r"famA\[1\]"):
        system_from_dict(doc)


def test_bad_version_and_channels():
    with pytest.raises(ValidationError, match="version"):
        system_from_dict({"version": 2, "famA": [[[0]]], "famB": [[[1]]]})
    with pytest.raises(ValidationError, match="channel"):
        system_from_dict({"famA": [[[0]]], "famB": [[[1]]], "perturbation": {"Q": {}}})
    with pytest.raises(ValidationError, match="bound"):
        system_from_dict({"famA": [[[0]]], "famB": [[[1]]],
                          "delays": {"internal": [{"family": [[[1]]], "bound": -1}]}})


def test_invalid_json_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"famA": [[[0]]],\n "famB": }')
    with pytest.raises(ParseError, match="line 2"):
        load_system(p)


def test_domain_forms():
    dom = parse_domain({"A": [[-1, 1], [[0, 1], [-2, 2]]]})
    assert dom.coords("A") == (((-1.0, 1.0), (0.0, 0.0)), ((0.0, 1.0), (-2.0, 2.0)))
    with pytest.raises(ValidationError):
        parse_domain({"A": [[-1, float("inf")]]})
    with pytest.raises(ValidationError):
        parse_domain({"A": [[1, -1]]})


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_system_round_trip(seed):
    rng = np.random.default_rng(seed)
    n, m = 2, 1
    c = lambda *shape: rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    pert = PerturbationStructure(A=ChannelStructure(c(1, n), {(0, 1): c(n, 1), (1, 2): c(n, 2)}))
    sys = LpvSystem.from_matrices([c(n, n), c(n, n)], [c(n, m)], pert=pert)
    dom = BoxDomain.real(A=[(-1, 1)])
    doc = json.loads(json.dumps(system_to_dict(sys, dom)))
    back = system_from_dict(doc)
    assert back.domain == dom
    for ch in "ABCD":
        for a, b in zip(sys.family(ch).coeffs, back.system.family(ch).coeffs):
            assert np.array_equal(a, b)
    assert set(back.system.pert.A.D) == {(0, 1), (1, 2)}


def test_delay_round_trip(tmp_path):
    dsys = load_system("tests/data/scalar_delay.json")
    p = tmp_path / "out.json"
    dump_system(dsys, p)
    back = load_system(p)
    assert isinstance(back, DelaySystem)
    assert back.bounds() == dsys.bounds()
    assert np.array_equal(back.external[0].family.coeffs[0], dsys.external[0].family.coeffs[0])


def test_delta_round_trip():
    d = DeltaAssignment({"A": {(0, 1): np.array([[1 + 2j, 0.5]])}, "Ad1": {(0, 1): np.eye(2)}})
    back = delta_from_dict(json.loads(json.dumps(delta_to_dict(d))))
    assert np.array_equal(back.get("A", 0, 1), d.get("A", 0, 1))
    assert np.array_equal(back.get("Ad1", 0, 1), np.eye(2))
    with pytest.raises(ParseError):
        delta_from_dict({"A": [{"i": 0}]})


def test_report_round_trip():
    doc = load_document("tests/data/uncontrollable_mode.json")
    rep = sweep_domain(doc.system, "controllability", doc.domain)
    d = json.loads(dumps_report(domain_report_to_dict(rep)))
    back = domain_report_from_dict(d)
    assert back.verdict == rep.verdict
    assert back.points_tested == rep.points_tested
    assert back.witnesses[0].s == pytest.approx(rep.witnesses[0].s)


def test_clean_rounds_and_encodes():
    out = clean({"a": 1 / 3, "b": math.inf, "c": float("nan"), "d": 1 + 2j, "e": np.float64(-0.0), "f": (1, 2)})
    assert out == {"a": 0.333333333333, "b": "inf", "c": "nan", "d": [1.0, 2.0], "e": 0.0, "f": [1, 2]}


def test_text_rendering():
    text = render_text({"result": {"verdict": "certified", "witnesses": [{"s": [0, 1]}]}, "tool": "lpvcert"})
    assert "verdict: \"certified\"" in text
    assert "[0]" in text
