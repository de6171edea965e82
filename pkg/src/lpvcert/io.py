"""JSON system, perturbation and report files.

System files (format version 1)::

    {
      "version": 1,
      "n": 2, "m": 1, "p": 2,
      "famA": [A0, A1, ...], "famB": [...], "famC": [...], "famD": [...],
      "perturbation": {"A": {"E": E, "blocks": [{"i": 0, "j": 1, "D": D}]}},
      "delays": {"internal": [{"family": [...], "bound": 1.0, "perturbation": {...}}],
                 "external": [...]},
      "domain": {"A": [[[re_lo, re_hi], [im_lo, im_hi]], ...]}
    }

Matrices are row-major nested lists.  An entry is a number or a
``[re, im]`` pair.  Each family is a list of coefficient matrices; ``famC``
and ``famD`` default to the identity and zero.  A domain coordinate may be
given as a plain ``[lo, hi]`` real interval.

Delta files map channels to block lists::

    {"A": [{"i": 0, "j": 1, "delta": M}], "Ad1": [...]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from numbers import Number

import numpy as np

from .delay import DelaySystem, DelayTerm, validate_delay
from .errors import ParseError, ValidationError
from .model import (
    CHANNELS,
    DELAY_CHANNELS,
    AffineFamily,
    BoxDomain,
    ChannelStructure,
    DeltaAssignment,
    LpvSystem,
    ParameterPoint,
    PerturbationStructure,
    has_errors,
    validate,
)
from .pbh import DomainReport, Property, Verdict, Witness

FORMAT_VERSION = 1
SIG_DIGITS = 12


# -- parsing ----------------------------------------------------------------------------

def _entry(x, where):
    if isinstance(x, bool):
        raise ParseError("expected a number or [re, im] pair, got a boolean", where)
    if isinstance(x, Number):
        return complex(x)
    if isinstance(x, list) and len(x) == 2 and all(isinstance(v, Number) and not isinstance(v, bool) for v in x):
        return complex(x[0], x[1])
    raise ParseError(f"expected a number or [re, im] pair, got {json.dumps(x)[:40]}", where)


def parse_matrix(obj, where="matrix") -> np.ndarray:
    if isinstance(obj, Number) and not isinstance(obj, bool):
        return np.array([[complex(obj)]])
    if not isinstance(obj, list) or not obj:
        raise ParseError("expected a non-empty list of rows", where)
    rows = []
    for r, row in enumerate(obj):
        if not isinstance(row, list) or not row:
            raise ParseError("expected a non-empty row", f"{where}[{r}]")
        rows.append([_entry(x, f"{where}[{r}][{c}]") for c, x in enumerate(row)])
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"row has {len(row)} entries, expected {width}", f"{where}[{r}]")
    return np.array(rows, dtype=complex)


def parse_family(obj, where) -> AffineFamily:
    if not isinstance(obj, list) or not obj:
        raise ParseError("expected a non-empty list of coefficient matrices", where)
    return AffineFamily(tuple(parse_matrix(m, f"{where}[{i}]") for i, m in enumerate(obj)))


def parse_structure(obj, where) -> ChannelStructure:
    if not isinstance(obj, dict):
        raise ParseError("expected an object with E and blocks", where)
    if "E" not in obj:
        raise ValidationError("missing field", f"{where}.E")
    E = parse_matrix(obj["E"], f"{where}.E")
    blocks = {}
    for k, b in enumerate(obj.get("blocks", [])):
        bw = f"{where}.blocks[{k}]"
        if not isinstance(b, dict) or not {"i", "j", "D"} <= set(b):
            raise ParseError("expected an object with i, j and D", bw)
        i, j = b["i"], b["j"]
        if not isinstance(i, int) or not isinstance(j, int) or isinstance(i, bool) or isinstance(j, bool):
            raise ParseError("block indices must be integers", bw)
        if (i, j) in blocks:
            raise ValidationError(f"duplicate block ({i},{j})", bw)
        blocks[(i, j)] = parse_matrix(b["D"], f"{bw}.D")
    return ChannelStructure(E, blocks)


def _interval(obj, where):
    if (not isinstance(obj, list) or len(obj) != 2
            or not all(isinstance(v, Number) and not isinstance(v, bool) for v in obj)):
        raise ParseError("expected an interval [lo, hi]", where)
    lo, hi = float(obj[0]), float(obj[1])
    if lo > hi:
        raise ValidationError("lower bound above upper bound", where)
    return lo, hi


def parse_domain(obj, where="domain") -> BoxDomain:
    if not isinstance(obj, dict):
        raise ParseError("expected an object keyed by channel", where)
    segs = {}
    for ch, coords in obj.items():
        cw = f"{where}.{ch}"
        if ch not in CHANNELS + DELAY_CHANNELS:
            raise ValidationError(f"unknown channel {ch!r}", cw)
        if not isinstance(coords, list):
            raise ParseError("expected a list of coordinates", cw)
        out = []
        for k, c in enumerate(coords):
            kw = f"{cw}[{k}]"
            if isinstance(c, list) and len(c) == 2 and all(isinstance(v, list) for v in c):
                out.append((_interval(c[0], kw + "[0]"), _interval(c[1], kw + "[1]")))
            else:
                out.append((_interval(c, kw), (0.0, 0.0)))
        segs[ch] = tuple(out)
    dom = BoxDomain(segs)
    for ch, coords in dom.segments.items():
        for k, (re, im) in enumerate(coords):
            if not all(math.isfinite(v) for v in re + im):
                raise ValidationError("interval must be finite", f"{where}.{ch}[{k}]")
    return dom


def _positive_int(doc, key):
    v = doc.get(key)
    if v is None:
        return None
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ValidationError(f"expected a positive integer, got {v!r}", key)
    return v


@dataclass
class SystemDocument:
    system: object  # LpvSystem or DelaySystem
    domain: BoxDomain | None = None

    @property
    def base(self) -> LpvSystem:
        return self.system.base if isinstance(self.system, DelaySystem) else self.system


def system_from_dict(doc) -> SystemDocument:
    """Build and validate a model from a parsed system document."""
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "$")
    version = doc.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported format version {version!r}", "version")
    for key in ("famA", "famB"):
        if key not in doc:
            raise ValidationError("missing required field", key)
    famA = parse_family(doc["famA"], "famA")
    famB = parse_family(doc["famB"], "famB")
    n = _positive_int(doc, "n") or famA.shape[0]
    m = _positive_int(doc, "m") or famB.shape[1]
    famC = parse_family(doc["famC"], "famC") if "famC" in doc else AffineFamily.constant(np.eye(n))
    p = _positive_int(doc, "p") or famC.shape[0]
    famD = parse_family(doc["famD"], "famD") if "famD" in doc else AffineFamily.constant(np.zeros((p, m)))
    pert_doc = doc.get("perturbation", {}) or {}
    if not isinstance(pert_doc, dict):
        raise ParseError("expected an object keyed by channel", "perturbation")
    for ch in pert_doc:
        if ch not in CHANNELS:
            raise ValidationError(f"unknown channel {ch!r}", "perturbation")
    pert = PerturbationStructure(**{
        ch: parse_structure(pert_doc[ch], f"perturbation.{ch}") for ch in CHANNELS if ch in pert_doc
    })
    sys = LpvSystem(n, m, p, famA, famB, famC, famD, pert)
    diags = validate(sys)
    if has_errors(diags):
        first = next(d for d in diags if d.level == "error")
        raise ValidationError(first.message, first.field)
    model = sys
    if "delays" in doc:
        model = _delays_from_dict(sys, doc["delays"])
    domain = parse_domain(doc["domain"]) if doc.get("domain") is not None else None
    return SystemDocument(model, domain)


def _delays_from_dict(sys, obj):
    if not isinstance(obj, dict):
        raise ParseError("expected an object with internal and external lists", "delays")
    terms = {}
    for kind in ("internal", "external"):
        out = []
        for j, t in enumerate(obj.get(kind, []) or []):
            tw = f"delays.{kind}[{j}]"
            if not isinstance(t, dict) or "family" not in t or "bound" not in t:
                raise ValidationError("expected family and bound", tw)
            bound = t["bound"]
            if not isinstance(bound, Number) or isinstance(bound, bool) or not math.isfinite(bound) or bound < 0:
                raise ValidationError("delay bound must be a finite nonnegative number", f"{tw}.bound")
            st = parse_structure(t["perturbation"], f"{tw}.perturbation") if t.get("perturbation") else None
            out.append(DelayTerm(parse_family(t["family"], f"{tw}.family"), st, float(bound)))
        terms[kind] = out
    dsys = DelaySystem(sys, terms["internal"], terms["external"])
    diags = validate_delay(dsys)
    if has_errors(diags):
        first = next(d for d in diags if d.level == "error")
        raise ValidationError(first.message, first.field)
    return dsys


def load_document(path) -> SystemDocument:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from exc
    return system_from_dict(doc)


def load_system(path):
    """Load an ``LpvSystem`` (or ``DelaySystem`` if the file has delays)."""
    return load_document(path).system


# -- serialization -----------------------------------------------------------------------------

def matrix_to_list(M):
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(M, dtype=complex)]


def _family_to_list(fam: AffineFamily):
    return [matrix_to_list(c) for c in fam.coeffs]


def _structure_to_dict(st: ChannelStructure):
    return {
        "E": matrix_to_list(st.E),
        "blocks": [{"i": i, "j": j, "D": matrix_to_list(d)} for (i, j), d in st.D.items()],
    }


def domain_to_dict(domain: BoxDomain):
    return {ch: [[list(re), list(im)] for re, im in coords] for ch, coords in domain.segments.items()}


def system_to_dict(model, domain: BoxDomain | None = None) -> dict:
    base = model.base if isinstance(model, DelaySystem) else model
    doc = {
        "version": FORMAT_VERSION,
        "n": base.n, "m": base.m, "p": base.p,
        **{f"fam{ch}": _family_to_list(base.family(ch)) for ch in CHANNELS},
        "perturbation": {
            ch: _structure_to_dict(base.pert.channel(ch)) for ch in CHANNELS if base.pert.channel(ch) is not None
        },
    }
    if isinstance(model, DelaySystem):
        doc["delays"] = {
            kind: [
                {"family": _family_to_list(t.family), "bound": t.bound,
                 **({"perturbation": _structure_to_dict(t.structure)} if t.structure is not None else {})}
                for t in terms
            ]
            for kind, terms in (("internal", model.internal), ("external", model.external))
        }
    if domain is not None:
        doc["domain"] = domain_to_dict(domain)
    return doc


def dump_system(model, path, domain=None):
    with open(path, "w") as fh:
        json.dump(system_to_dict(model, domain), fh, indent=1)
        fh.write("\n")


def delta_from_dict(obj, where="delta") -> DeltaAssignment:
    if not isinstance(obj, dict):
        raise ParseError("expected an object keyed by channel", where)
    blocks = {}
    for ch, items in obj.items():
        per = {}
        if not isinstance(items, list):
            raise ParseError("expected a list of blocks", f"{where}.{ch}")
        for k, b in enumerate(items):
            bw = f"{where}.{ch}[{k}]"
            if not isinstance(b, dict) or not {"i", "j", "delta"} <= set(b):
                raise ParseError("expected an object with i, j and delta", bw)
            per[(int(b["i"]), int(b["j"]))] = parse_matrix(b["delta"], f"{bw}.delta")
        blocks[ch] = per
    return DeltaAssignment(blocks)


def delta_to_dict(delta: DeltaAssignment):
    return {
        ch: [{"i": i, "j": j, "delta": matrix_to_list(v)} for (i, j), v in per.items()]
        for ch, per in delta.blocks.items()
    }


def load_delta(path) -> DeltaAssignment:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from exc
    return delta_from_dict(obj)


# -- reports ---------------------------------------------------------------------------------

def point_to_dict(point: ParameterPoint):
    return {ch: [[z.real, z.imag] for z in point.tail(ch)] for ch in CHANNELS + DELAY_CHANNELS if point.tail(ch)}


def point_from_dict(obj) -> ParameterPoint:
    return ParameterPoint(**{"z" + ch: tuple(complex(a, b) for a, b in v) for ch, v in obj.items()})


def witness_to_dict(w: Witness):
    return {"s": [w.s.real, w.s.imag], "point": point_to_dict(w.point), "sigma_min": w.sigma_min, "ratio": w.ratio}


def domain_report_to_dict(rep: DomainReport):
    return {
        "verdict": rep.verdict.value,
        "property": rep.property.value,
        "points_tested": rep.points_tested,
        "refinement_depth": rep.refinement_depth,
        "min_sigma": rep.min_sigma,
        "min_ratio": rep.min_ratio,
        "tol": rep.tol,
        "grid": rep.grid,
        "exhaustive": rep.exhaustive,
        "method": rep.method,
        "witnesses": [witness_to_dict(w) for w in rep.witnesses],
        "certificate": rep.certificate.to_dict() if rep.certificate is not None else None,
        "notes": list(rep.notes),
        "extra": rep.extra,
    }


def _num(v):
    if isinstance(v, str):
        return {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}.get(v, v)
    return v


def domain_report_from_dict(d) -> DomainReport:
    """Rebuild the verdict fields of a serialized :class:`DomainReport`."""
    return DomainReport(
        verdict=Verdict(d["verdict"]),
        property=Property(d["property"]),
        points_tested=d["points_tested"],
        refinement_depth=d["refinement_depth"],
        min_sigma=_num(d["min_sigma"]),
        min_ratio=_num(d["min_ratio"]),
        tol=_num(d["tol"]),
        grid=d["grid"],
        witnesses=[Witness(complex(*w["s"]), point_from_dict(w["point"]), _num(w["sigma_min"]), _num(w["ratio"]))
                   for w in d["witnesses"]],
        exhaustive=d["exhaustive"],
        method=d["method"],
        notes=list(d["notes"]),
        extra=d.get("extra", {}),
    )


def clean(obj):
    """JSON-ready copy with floats rounded to ``SIG_DIGITS`` significant digits.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``;
    complex numbers become ``[re, im]``; tuples become lists.
    """
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [clean(float(obj.real)), clean(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        x = float(f"{x:.{SIG_DIGITS}g}")
        return 0.0 if x == 0 else x
    if isinstance(obj, ParameterPoint):
        return clean(point_to_dict(obj))
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(clean(report), sort_keys=True, indent=2) + "\n"


def render_text(report: dict, indent: int = 0) -> str:
    """Indented ``key: value`` rendering of a report for terminals."""
    lines = []
    pad = "  " * indent
    for key in sorted(report):
        val = report[key]
        if isinstance(val, dict):
            lines.append(f"{pad}{key}:")
            lines.append(render_text(val, indent + 1))
        elif isinstance(val, list) and val and isinstance(val[0], dict):
            lines.append(f"{pad}{key}:")
            for k, item in enumerate(val):
                lines.append(f"{pad}  [{k}]")
                lines.append(render_text(item, indent + 2))
        else:
            lines.append(f"{pad}{key}: {json.dumps(val)}")
    return "\n".join(line for line in lines if line)
