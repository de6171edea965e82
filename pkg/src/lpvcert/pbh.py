"""Rank tests on the spectral matrix functions of a parameter-varying system.

For fixed parameters and perturbation blocks the system is an ordinary LTI
system (A, B, C, D).  Its spectral matrices are

    controllability          Z_C(s)  = [sI - A, B]                  n x (n+m)
    observability            Z_O(s)  = [sI - A; C]                  (n+p) x n
    output controllability   Z_OC(s) = [C (sI - A), C B + D]        p x (n+m)
    system matrix            S(s)    = [[sI - A, -B], [C, D]]       (n+p) x (n+m)

Rank can only drop at eigenvalues of A (except for ``Z_OC`` when ``C`` is
rank deficient), so each property is decided by checking the smallest
singular value at the eigen-loci.  A matrix counts as full rank when its
smallest singular value exceeds ``tol * max(1, sigma_max)``.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .cover import CoverBox, certify_positive
from .errors import MissingSGridError, UnboundedDomainError
from .linalg import DEFAULT_TOL
from .model import (
    CHANNELS,
    AffineFamily,
    BoxDomain,
    ChannelStructure,
    DeltaAssignment,
    LpvSystem,
    ParameterPoint,
    PerturbationStructure,
    ZERO_DELTA,
    total_matrices,
)


class PbhKind(enum.Enum):
    CONTROLLABILITY = "controllability"
    OBSERVABILITY = "observability"
    OUTPUT_CONTROLLABILITY = "output_controllability"
    SYSTEM_MATRIX = "system_matrix"


class ZeroKind(enum.Enum):
    INPUT_DECOUPLING = "input_decoupling"
    OUTPUT_DECOUPLING = "output_decoupling"
    INPUT_OUTPUT_DECOUPLING = "input_output_decoupling"
    EXTERNAL_INPUT_DECOUPLING = "external_input_decoupling"
    INVARIANT = "invariant"
    TRANSMISSION = "transmission"


class Property(enum.Enum):
    CONTROLLABILITY = "controllability"
    OBSERVABILITY = "observability"
    OUTPUT_CONTROLLABILITY = "output_controllability"
    STABILIZABILITY = "stabilizability"
    DETECTABILITY = "detectability"
    MINIMALITY = "minimality"

    @classmethod
    def parse(cls, value) -> "Property":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for p in cls:
            if p.value == key:
                return p
        raise ValueError(f"unknown property {value!r}")


class Verdict(enum.Enum):
    CERTIFIED = "certified"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


# -- matrix level -------------------------------------------------------------------

def pbh_matrix(kind: PbhKind, s, A, B, C, D) -> np.ndarray:
    n = A.shape[0]
    sIA = s * np.eye(n) - A
    if kind is PbhKind.CONTROLLABILITY:
        return np.hstack([sIA, B])
    if kind is PbhKind.OBSERVABILITY:
        return np.vstack([sIA, C])
    if kind is PbhKind.OUTPUT_CONTROLLABILITY:
        return np.hstack([C @ sIA, C @ B + D])
    if kind is PbhKind.SYSTEM_MATRIX:
        return np.block([[sIA, -B], [C, D]])
    raise ValueError(kind)


def assemble_pbh(sys: LpvSystem, kind: PbhKind, s, point: ParameterPoint, delta: DeltaAssignment | None = None):
    """Spectral matrix of ``kind`` at ``s`` for the perturbed system at ``point``."""
    A, B, C, D = total_matrices(sys, point, delta)
    return pbh_matrix(kind, complex(s), A, B, C, D)


def eigen_loci(sys: LpvSystem, point: ParameterPoint, delta: DeltaAssignment | None = None):
    """Eigenvalues of the perturbed state matrix at ``point``."""
    A, _, _, _ = total_matrices(sys, point, delta)
    return linalg.eigenvalues(A)


def classify_zeros(sys: LpvSystem, s0, point: ParameterPoint, delta=None, tol=DEFAULT_TOL) -> set:
    """Which kinds of zero ``s0`` is for the system at ``point``."""
    mats = total_matrices(sys, point, delta)
    return classify_zeros_matrices(s0, *mats, tol=tol)


def classify_zeros_matrices(s0, A, B, C, D, tol=DEFAULT_TOL) -> set:
    n, m = B.shape
    p = C.shape[0]
    s0 = complex(s0)
    rc = linalg.numerical_rank(pbh_matrix(PbhKind.CONTROLLABILITY, s0, A, B, C, D), tol)
    ro = linalg.numerical_rank(pbh_matrix(PbhKind.OBSERVABILITY, s0, A, B, C, D), tol)
    roc = linalg.numerical_rank(pbh_matrix(PbhKind.OUTPUT_CONTROLLABILITY, s0, A, B, C, D), tol)
    rs = linalg.numerical_rank(pbh_matrix(PbhKind.SYSTEM_MATRIX, s0, A, B, C, D), tol)
    kinds = set()
    if rc < n:
        kinds.add(ZeroKind.INPUT_DECOUPLING)
    if ro < n:
        kinds.add(ZeroKind.OUTPUT_DECOUPLING)
    if rc < n and ro < n:
        kinds.add(ZeroKind.INPUT_OUTPUT_DECOUPLING)
    if roc < p:
        kinds.add(ZeroKind.EXTERNAL_INPUT_DECOUPLING)
    if rs < n + min(m, p):
        kinds.add(ZeroKind.INVARIANT)
        if rc == n and ro == n:
            kinds.add(ZeroKind.TRANSMISSION)
    if ZeroKind.TRANSMISSION in kinds:
        assert ZeroKind.INVARIANT in kinds
        assert ZeroKind.INPUT_DECOUPLING not in kinds and ZeroKind.OUTPUT_DECOUPLING not in kinds
    return kinds


# -- property verdicts -----------------------------------------------------------------

@dataclass(frozen=True)
class Witness:
    s: complex
    point: ParameterPoint
    sigma_min: float
    ratio: float  # sigma_min / max(1, sigma_max)


@dataclass
class PropertyVerdict:
    """Outcome of a property test at one parameter point.

    ``holds`` is true exactly when ``min_ratio > tol``, where ``min_ratio``
    is the smallest ``sigma_min / max(1, sigma_max)`` over the tested loci.
    ``min_sigma`` is the smallest raw ``sigma_min`` and ``det_gram`` the
    determinant of the Hermitian product at the tightest locus.  When no
    locus needs testing both minima are ``inf``.
    """

    property: Property
    holds: bool
    min_sigma: float
    min_ratio: float
    tol: float
    witnesses: list = field(default_factory=list)
    exhaustive: bool = True
    det_gram: float | None = None
    loci_tested: int = 0


def dual(sys: LpvSystem) -> LpvSystem:
    """The conjugate-transposed system ``(A*, C*, B*, D*)``.

    Nominal coefficients are conjugate-transposed, so the dual must be
    evaluated at the conjugate parameter point (:meth:`ParameterPoint.conj`).
    A perturbation ``sum_j D_ij Delta_ij E`` becomes ``sum_j E* (Delta_ij* D_ij*) I``:
    the dual keeps ``E*`` as left factor, an identity as shared right
    factor, and carries ``Delta_ij* D_ij*`` as its free block (see
    :func:`dual_delta`).
    """

    def fam(f: AffineFamily) -> AffineFamily:
        return AffineFamily(tuple(c.conj().T for c in f.coeffs))

    def st(x: ChannelStructure | None, cols) -> ChannelStructure | None:
        if x is None:
            return None
        return ChannelStructure(np.eye(cols), {k: x.E.conj().T for k in x.D})

    pert = PerturbationStructure(
        A=st(sys.pert.A, sys.n),
        B=st(sys.pert.C, sys.p),
        C=st(sys.pert.B, sys.n),
        D=st(sys.pert.D, sys.p),
    )
    return LpvSystem(sys.n, sys.p, sys.m, fam(sys.famA), fam(sys.famC), fam(sys.famB), fam(sys.famD), pert)


def dual_delta(sys: LpvSystem, delta: DeltaAssignment) -> DeltaAssignment:
    swap = {"A": "A", "B": "C", "C": "B", "D": "D"}
    out = {}
    for ch in CHANNELS:
        st = sys.pert.channel(ch)
        if st is None:
            continue
        per = {}
        for key, d in st.D.items():
            blk = delta.get(ch, *key)
            if blk is not None:
                per[key] = blk.conj().T @ d.conj().T
        out[swap[ch]] = per
    return DeltaAssignment(out)


def dual_point(point: ParameterPoint) -> ParameterPoint:
    c = point.conj()
    return ParameterPoint(c.zA, c.zC, c.zB, c.zD, c.zAd, c.zBd)


def _scan(matrices, loci, kind):
    """(s, sigma_min, ratio, det_gram) for every locus."""
    out = []
    for s in loci:
        Z = pbh_matrix(kind, s, *matrices)
        smin, smax = linalg.svd_extremes(Z)
        ratio = smin / max(1.0, smax)
        out.append((complex(s), smin, ratio, Z))
    return out


def _loci_verdict(prop, rows, tol, point, exhaustive=True, conj=False) -> PropertyVerdict:
    if not rows:
        return PropertyVerdict(prop, True, float("inf"), float("inf"), tol, [], exhaustive, None, 0)
    rows = sorted(rows, key=lambda r: (r[2], r[0].real, r[0].imag))
    tight = rows[0]
    s_of = (lambda s: s.conjugate()) if conj else (lambda s: s)
    failing = [r for r in rows if r[2] <= tol]
    chosen = failing if failing else [tight]
    witnesses = [Witness(s_of(r[0]), point, r[1], r[2]) for r in chosen]
    Z = tight[3]
    g = Z @ Z.conj().T if Z.shape[0] <= Z.shape[1] else Z.conj().T @ Z
    det_gram = float(np.real(np.linalg.det(g)))
    return PropertyVerdict(
        prop, not failing, float(tight[1]), float(tight[2]), tol, witnesses, exhaustive, det_gram, len(rows)
    )


def check_matrices(prop: Property, A, B, C, D, tol=DEFAULT_TOL, s_grid=None, point=None) -> PropertyVerdict:
    """Property test for a fixed LTI system."""
    prop = Property.parse(prop)
    point = point if point is not None else ParameterPoint()
    if prop is Property.MINIMALITY:
        vc = check_matrices(Property.CONTROLLABILITY, A, B, C, D, tol, point=point)
        vo = check_matrices(Property.OBSERVABILITY, A, B, C, D, tol, point=point)
        tight = vc if vc.min_ratio <= vo.min_ratio else vo
        return PropertyVerdict(
            prop, vc.holds and vo.holds, min(vc.min_sigma, vo.min_sigma), min(vc.min_ratio, vo.min_ratio), tol,
            (vc.witnesses if not vc.holds else []) + (vo.witnesses if not vo.holds else []) or tight.witnesses,
            True, tight.det_gram, vc.loci_tested + vo.loci_tested,
        )
    if prop in (Property.OBSERVABILITY, Property.DETECTABILITY):
        # dual route: observability of (A, C) is controllability of (A*, C*)
        Ad, Bd = A.conj().T, C.conj().T
        loci = linalg.eigenvalues(Ad)
        if prop is Property.DETECTABILITY:
            loci = [s for s in loci if s.real >= -tol]
        rows = _scan((Ad, Bd, B.conj().T, D.conj().T), loci, PbhKind.CONTROLLABILITY)
        return _loci_verdict(prop, rows, tol, point, conj=True)
    loci = list(linalg.eigenvalues(A))
    kind = PbhKind.CONTROLLABILITY
    exhaustive = True
    if prop is Property.STABILIZABILITY:
        loci = [s for s in loci if s.real >= -tol]
    elif prop is Property.OUTPUT_CONTROLLABILITY:
        kind = PbhKind.OUTPUT_CONTROLLABILITY
        if linalg.numerical_rank(C, tol) < C.shape[0]:
            if s_grid is None:
                raise MissingSGridError(
                    "output matrix is rank deficient: rank can drop away from the eigenvalues, supply an s-grid"
                )
            loci = loci + [complex(s) for s in s_grid]
            exhaustive = False
    rows = _scan((A, B, C, D), loci, kind)
    return _loci_verdict(prop, rows, tol, point, exhaustive=exhaustive)


def check_property_at(
    sys: LpvSystem,
    prop,
    point: ParameterPoint | None = None,
    delta: DeltaAssignment | None = None,
    tol: float = DEFAULT_TOL,
    s_grid=None,
) -> PropertyVerdict:
    """Decide a structural property at one parameter point.

    Parameters
    ----------
    sys : LpvSystem
    prop : Property or str
        One of controllability, observability, output_controllability,
        stabilizability, detectability, minimality.
    point : ParameterPoint, optional
        Defaults to the parameter origin.
    delta : DeltaAssignment, optional
        Perturbation block values; zero when omitted.
    tol : float
        Relative rank tolerance.
    s_grid : iterable of complex, optional
        Extra test points for output controllability when the output matrix
        is rank deficient.  The verdict is then marked non-exhaustive.

    Raises
    ------
    MissingSGridError
        Output controllability with a rank-deficient output matrix and no
        ``s_grid``.
    """
    point = point if point is not None else sys.origin()
    mats = total_matrices(sys, point, delta or ZERO_DELTA)
    return check_matrices(prop, *mats, tol=tol, s_grid=s_grid, point=point)


def margin_value(prop, A, B, C, D, tol=DEFAULT_TOL, s_grid=None) -> float:
    """Continuous margin whose positivity decides ``prop`` at a point.

    The smallest rank ratio over the tested loci.  For stabilizability and
    detectability every locus contributes ``max(ratio, -Re s)`` so that loci
    crossing into the right half-plane do not make the margin jump.
    """
    prop = Property.parse(prop)
    if prop is Property.MINIMALITY:
        return min(margin_value(Property.CONTROLLABILITY, A, B, C, D, tol),
                   margin_value(Property.OBSERVABILITY, A, B, C, D, tol))
    if prop in (Property.OBSERVABILITY, Property.DETECTABILITY):
        A, B, C, D = A.conj().T, C.conj().T, B.conj().T, D.conj().T
    kind = PbhKind.CONTROLLABILITY
    loci = list(linalg.eigenvalues(A))
    if prop is Property.OUTPUT_CONTROLLABILITY:
        kind = PbhKind.OUTPUT_CONTROLLABILITY
        if s_grid is not None and linalg.numerical_rank(C, tol) < C.shape[0]:
            loci += [complex(s) for s in s_grid]
    halfplane = prop in (Property.STABILIZABILITY, Property.DETECTABILITY)
    best = float("inf")
    for s, _, ratio, _ in _scan((A, B, C, D), loci, kind):
        v = max(ratio, -s.real) if halfplane else ratio
        best = min(best, v)
    return best


# -- domain sweep -------------------------------------------------------------------------

@dataclass
class DomainReport:
    verdict: Verdict
    property: Property
    points_tested: int
    refinement_depth: int
    min_sigma: float
    min_ratio: float
    tol: float
    grid: int
    witnesses: list = field(default_factory=list)
    exhaustive: bool = True
    method: str = "grid"
    certificate: object = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


PARALLEL_MIN = 256  # below this a process pool costs more than it saves


def _check_task(args):
    sys, prop, point, delta, tol, s_grid = args
    return check_property_at(sys, prop, point, delta, tol, s_grid)


def _evaluate(sys, prop, points, delta, tol, s_grid, jobs):
    tasks = [(sys, prop, pt, delta, tol, s_grid) for pt in points]
    if jobs > 1 and len(tasks) >= PARALLEL_MIN:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_check_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [_check_task(t) for t in tasks]


def _merge(verdicts):
    """Order-independent reduction: tightest verdict first, ties by point repr."""
    return sorted(verdicts, key=lambda v: (v.min_ratio, repr(v.witnesses[0].point) if v.witnesses else ""))


def sweep_domain(
    sys: LpvSystem,
    prop,
    domain: BoxDomain,
    grid: int = 9,
    tol: float = DEFAULT_TOL,
    delta: DeltaAssignment | None = None,
    budget: int = 100_000,
    refine: int = 2,
    certify: bool = False,
    cover_budget: int = 100_000,
    s_grid=None,
    jobs: int = 1,
) -> DomainReport:
    """Test a property over a box of parameter values.

    The property is checked at every node of a tensor grid with ``grid``
    points per free axis.  The grid is then refined ``refine`` times around
    the tightest node, each time halving the local spacing.  With
    ``certify=True`` the positivity of the continuous margin
    (:func:`margin_value`) is additionally proved on the whole box by the
    cover certifier, with the rank tolerance as floor.

    ``budget`` caps the number of grid nodes.  The verdict is
    ``VIOLATED`` as soon as any node fails, ``INCONCLUSIVE`` when the
    initial grid does not fit in the budget or the cover certifier runs out
    of cells, and ``CERTIFIED`` otherwise.
    """
    prop = Property.parse(prop)
    try:
        domain.check_bounded()
    except UnboundedDomainError:
        raise
    domain = domain.for_counts(sys.qs())
    delta = delta or ZERO_DELTA
    points = domain.grid_points(grid)
    report = DomainReport(Verdict.INCONCLUSIVE, prop, 0, 0, float("inf"), float("inf"), tol, grid)
    if budget < len(points):
        points = points[:budget]
        report.notes.append(f"grid of {len(domain.grid_points(grid))} nodes truncated to the budget of {budget}")
        complete = False
    else:
        complete = True
    verdicts = _evaluate(sys, prop, points, delta, tol, s_grid, jobs)
    report.points_tested = len(verdicts)
    if not verdicts:
        report.notes.append("empty grid budget")
        return report
    report.exhaustive = all(v.exhaustive for v in verdicts)
    ranked = _merge(verdicts)
    report.min_sigma = min(v.min_sigma for v in verdicts)
    report.min_ratio = ranked[0].min_ratio
    failing = [v for v in ranked if not v.holds]
    if failing:
        report.verdict = Verdict.VIOLATED
        report.witnesses = [w for v in failing[:5] for w in v.witnesses][:10]
        return report
    report.witnesses = list(ranked[0].witnesses)
    if not complete:
        return report

    free = domain.free_axes()
    used = len(verdicts)
    steps = {(ch, k, part): (hi - lo) / (grid - 1) for ch, k, part, lo, hi in free}
    best = ranked[0]
    for depth in range(1, refine + 1):
        if not free or not best.witnesses:
            break
        center = best.witnesses[0].point
        half = {key: w / 2 ** (depth - 1) for key, w in steps.items()}
        sub = domain.shrink_around(center, half).grid_points(grid)
        if used + len(sub) > budget:
            report.notes.append("refinement stopped at the grid budget")
            break
        more = _evaluate(sys, prop, sub, delta, tol, s_grid, jobs)
        used += len(more)
        report.refinement_depth = depth
        ranked = _merge(more)
        report.min_sigma = min(report.min_sigma, min(v.min_sigma for v in more))
        failing = [v for v in ranked if not v.holds]
        if failing:
            report.points_tested = used
            report.verdict = Verdict.VIOLATED
            report.min_ratio = min(report.min_ratio, ranked[0].min_ratio)
            report.witnesses = [w for v in failing[:5] for w in v.witnesses][:10]
            return report
        if ranked[0].min_ratio < report.min_ratio:
            report.min_ratio = ranked[0].min_ratio
            report.witnesses = list(ranked[0].witnesses)
            best = ranked[0]
    report.points_tested = used

    if certify and free and report.exhaustive:
        cert = certify_margin(sys, prop, domain, tol, delta, cover_budget, s_grid)
        report.certificate = cert
        report.method = "cover"
        if cert.status == "witness":
            pt = _point_on_axes(domain, free, cert.witness_point)
            v = check_property_at(sys, prop, pt, delta, tol, s_grid)
            report.verdict = Verdict.VIOLATED if not v.holds else Verdict.INCONCLUSIVE
            report.witnesses = v.witnesses
            if v.holds:
                report.notes.append("margin fell below the floor without an exact rank loss")
            return report
        if cert.status == "inconclusive":
            report.notes.append("cover certification ran out of cells")
            return report
    if not report.exhaustive:
        report.notes.append("output matrix rank deficient: only the supplied s-grid and eigen-loci were tested")
    report.verdict = Verdict.CERTIFIED
    return report


def _point_on_axes(domain: BoxDomain, free, x):
    return domain.point_from({(ch, k, part): float(v) for (ch, k, part, _, _), v in zip(free, x)})


def certify_margin(sys, prop, domain: BoxDomain, tol=DEFAULT_TOL, delta=None, budget=100_000, s_grid=None):
    """Cover-certify ``margin_value > tol`` over the free axes of ``domain``."""
    domain = domain.for_counts(sys.qs())
    free = domain.free_axes()
    delta = delta or ZERO_DELTA
    box = CoverBox.from_intervals([(lo, hi) for _, _, _, lo, hi in free],
                                  names=[f"{ch}{k + 1}.{'re' if part == 0 else 'im'}" for ch, k, part, _, _ in free])

    def f(x):
        pt = _point_on_axes(domain, free, x)
        return margin_value(prop, *total_matrices(sys, pt, delta), tol=tol, s_grid=s_grid)

    return certify_positive(f, box, floor=tol, budget=budget)
