"""Perturbation radii that preserve a property, and perturbations that break it.

The radius follows a Banach-lemma argument on the Hermitian product of the
nominal spectral matrix along the imaginary axis.  With

    eps_c0   = min  lambda_min(H(i w, z))
    delta_c0 = max  lambda_max(H(i w, z))

over a frequency grid on ``[-Omega, Omega]`` and sampled parameter points,
where ``H = Z Z*`` (controllability) or ``Z* Z`` (observability), any
perturbation with lifted norm below

    delta = sqrt(delta_c0**2 + eps_c0) - delta_c0

keeps ``H`` positive definite.  Dividing by the largest parameter factor
norm turns this into a bound on the stacked block matrix.  The frequency
axis is truncated at ``Omega = 2 (1 + sup ||A(z)||)``: beyond it
``lambda_min(H(i w)) >= w**2 / 2`` grows monotonically, so the minimum lies
inside the window.  Radii are labelled as formula bounds and should be paired
with :func:`verify_radius`, because eigenvalues of ``A + A~`` migrate off the
nominal loci under perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .errors import NominalAlreadyViolated, NominalPropertyFails, NotExpressible, ShapeMismatchError
from .linalg import DEFAULT_TOL
from .model import (
    CHANNELS,
    BoxDomain,
    DeltaAssignment,
    LpvSystem,
    evaluate_family,
    random_delta,
    stacked_delta,
    total_matrices,
)
from .pbh import PbhKind, Property, Verdict, assemble_pbh, check_property_at, sweep_domain

RADIUS_LABEL = "formula bound (sampled imaginary axis, truncated at Omega)"

_OUTPUT_SIDE = (Property.OBSERVABILITY, Property.DETECTABILITY)
_SUPPORTED = (Property.CONTROLLABILITY, Property.OBSERVABILITY, Property.STABILIZABILITY, Property.DETECTABILITY)


def _second_channel(prop: Property) -> str:
    return "C" if prop in _OUTPUT_SIDE else "B"


def _channels(prop: Property):
    if prop is Property.MINIMALITY:
        return ("A", "B", "C")
    return ("A", _second_channel(prop))


def _supported(prop, minimality=False) -> Property:
    prop = Property.parse(prop)
    if prop is Property.MINIMALITY and minimality:
        return prop
    if prop not in _SUPPORTED:
        raise ValueError(f"no radius for {prop.value}; use controllability or observability")
    return prop


@dataclass
class RadiusResult:
    property: Property
    eps_c0: float
    delta_c0: float
    delta: float
    block_bound: float
    omega_truncation: float
    omega_points: int
    boundary_points: int
    interior_points: int
    sup_factor_norm_sq: float
    eps_at: tuple = ()
    delta_at: tuple = ()
    label: str = RADIUS_LABEL
    components: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "property": self.property.value,
            "eps_c0": self.eps_c0,
            "delta_c0": self.delta_c0,
            "delta": self.delta,
            "block_bound": self.block_bound,
            "omega_truncation": self.omega_truncation,
            "omega_points": self.omega_points,
            "boundary_points": self.boundary_points,
            "interior_points": self.interior_points,
            "sup_factor_norm_sq": self.sup_factor_norm_sq,
            "eps_at_omega": self.eps_at[0] if self.eps_at else None,
            "delta_at_omega": self.delta_at[0] if self.delta_at else None,
            "label": self.label,
            **({"components": self.components} if self.components else {}),
        }


def _hermitian_stack(A, X, omegas, output_side):
    """``H(i w)`` for every ``w``: ``w^2 I + i w (A - A*) + P``."""
    n = A.shape[0]
    if output_side:
        P = A.conj().T @ A + X.conj().T @ X
    else:
        P = A @ A.conj().T + X @ X.conj().T
    K = A - A.conj().T
    w = np.asarray(omegas, dtype=float)[:, None, None]
    return (w**2) * np.eye(n)[None] + 1j * w * K[None] + P[None]


def _samples(sys: LpvSystem, domain: BoxDomain, grid: int):
    dom = domain.for_counts(sys.qs())
    boundary = dom.boundary_points(grid)
    seen = set(boundary)
    interior = [pt for pt in dom.grid_points(max(3, grid // 2 + 1)) if pt not in seen]
    return dom, boundary, interior


def _omega_grid(omega, k, half):
    if half:
        return np.linspace(0.0, omega, k + 1)
    return np.linspace(-omega, omega, 2 * k + 1)


def _constants(sys, domain, prop, grid, omega_samples, tol):
    prop = _supported(prop)
    dom, boundary, interior = _samples(sys, domain, grid)
    report = sweep_domain(sys, prop, dom, grid=grid, tol=tol, refine=0)
    if report.verdict is Verdict.VIOLATED:
        raise NominalPropertyFails(f"nominal system is not {prop.value} on the domain")
    out = prop in _OUTPUT_SIDE
    second = _second_channel(prop)
    sup_a = max(np.linalg.norm(evaluate_family(sys.famA, pt.zA), 2) for pt in boundary)
    omega = 2.0 * (1.0 + float(sup_a))
    half = sys.is_real() and dom.is_real()
    omegas = _omega_grid(omega, omega_samples, half)
    eps, eps_at = np.inf, ()
    dmax, dmax_at = -np.inf, ()
    for pt, on_boundary in [(p, True) for p in boundary] + [(p, False) for p in interior]:
        A = evaluate_family(sys.famA, pt.zA)
        X = evaluate_family(sys.family(second), pt.tail(second))
        lam = np.linalg.eigvalsh(_hermitian_stack(A, X, omegas, out))
        k = int(np.argmin(lam[:, 0]))
        if lam[k, 0] < eps:
            eps, eps_at = float(lam[k, 0]), (float(omegas[k]), pt)
        if on_boundary:
            k = int(np.argmax(lam[:, -1]))
            if lam[k, -1] > dmax:
                dmax, dmax_at = float(lam[k, -1]), (float(omegas[k]), pt)
    if eps <= tol**2:
        raise NominalPropertyFails(f"nominal spectral product is singular (eps_c0 = {eps:.3g})")
    factor = max(
        float(np.sum(np.abs(pt.full("A")) ** 2) + np.sum(np.abs(pt.full(second)) ** 2))
        for pt in boundary + interior
    )
    return dict(
        eps=eps, dmax=dmax, omega=omega, omegas=len(omegas), boundary=len(boundary),
        interior=len(interior), factor=factor, eps_at=eps_at, dmax_at=dmax_at, prop=prop,
    )


def bound_constants(sys: LpvSystem, domain: BoxDomain, prop="controllability", grid: int = 9,
                    omega_samples: int = 200, tol: float = DEFAULT_TOL):
    """Spectral constants ``(eps_c0, delta_c0, Omega)`` of the nominal system.

    Raises
    ------
    NominalPropertyFails
        The nominal system loses the property somewhere on the sampled domain.
    """
    c = _constants(sys, domain, prop, grid, omega_samples, tol)
    return c["eps"], c["dmax"], c["omega"]


def preservation_radius(sys: LpvSystem, domain: BoxDomain, prop="controllability", grid: int = 9,
                        omega_samples: int = 200, tol: float = DEFAULT_TOL) -> RadiusResult:
    """Norm bounds on structured perturbations that keep ``prop``.

    Parameters
    ----------
    sys : LpvSystem
    domain : BoxDomain
        Bounded parameter box.  Faces are sampled with ``grid`` points per
        axis; a coarser interior grid is added for the lower constant.
    prop : str or Property
        controllability, observability, stabilizability, detectability or
        minimality.  Stabilizability and detectability reuse the machinery
        of the first two; minimality reports the tighter of the
        controllability and observability radii.
    omega_samples : int
        Frequency samples on ``[0, Omega]``; doubled for complex systems.

    Returns
    -------
    RadiusResult
    """
    if _supported(prop, minimality=True) is Property.MINIMALITY:
        parts = [preservation_radius(sys, domain, p, grid, omega_samples, tol)
                 for p in (Property.CONTROLLABILITY, Property.OBSERVABILITY)]
        tight = min(parts, key=lambda r: r.block_bound)
        return replace(
            tight, property=Property.MINIMALITY, label=tight.label + "; minimality: tighter of both sides",
            components={r.property.value: {"delta": r.delta, "block_bound": r.block_bound} for r in parts},
        )
    c = _constants(sys, domain, prop, grid, omega_samples, tol)
    delta = float(np.sqrt(c["dmax"] ** 2 + c["eps"]) - c["dmax"])
    return RadiusResult(
        property=c["prop"], eps_c0=c["eps"], delta_c0=c["dmax"], delta=delta,
        block_bound=delta / float(np.sqrt(c["factor"])), omega_truncation=c["omega"],
        omega_points=c["omegas"], boundary_points=c["boundary"], interior_points=c["interior"],
        sup_factor_norm_sq=c["factor"], eps_at=c["eps_at"], delta_at=c["dmax_at"],
    )


def stacked_norm(sys: LpvSystem, delta: DeltaAssignment, prop="controllability") -> float:
    """Spectral norm of the stacked blocks of ``A`` and the input (or output) channel.

    For minimality the larger of the input-side and output-side norms.
    """
    prop = Property.parse(prop)
    if prop is Property.MINIMALITY:
        return max(stacked_norm(sys, delta, Property.CONTROLLABILITY),
                   stacked_norm(sys, delta, Property.OBSERVABILITY))
    return linalg.svd_extremes(stacked_delta(sys, delta, _second_channel(prop)))[1]


def is_admissible(delta: DeltaAssignment, radius: RadiusResult, sys: LpvSystem) -> bool:
    """Whether the stacked block norm is strictly below ``radius.block_bound``."""
    for ch in CHANNELS:
        st = sys.pert.channel(ch)
        for (i, j), blk in delta.blocks.get(ch, {}).items():
            if st is None or (i, j) not in st.D:
                raise ShapeMismatchError(f"channel {ch} has no block ({i},{j})")
            if blk.shape != st.delta_shape(i, j):
                raise ShapeMismatchError(
                    f"Delta[{ch}]({i},{j}) has shape {blk.shape}, expected {st.delta_shape(i, j)}"
                )
    return stacked_norm(sys, delta, radius.property) < radius.block_bound


# -- violations -------------------------------------------------------------------------

@dataclass
class ViolationWitness:
    point: object
    delta: DeltaAssignment
    s0: complex
    sigma_min: float
    norm: float
    method: str  # "projection" or "constraints"

    def to_dict(self):
        return {
            "s0": [self.s0.real, self.s0.imag],
            "sigma_min": self.sigma_min,
            "norm": self.norm,
            "method": self.method,
            "point": {ch: [[z.real, z.imag] for z in self.point.tail(ch)] for ch in CHANNELS},
            "delta": {
                ch: [{"i": i, "j": j, "delta": [[[v.real, v.imag] for v in row] for row in blk]}
                     for (i, j), blk in per.items()]
                for ch, per in self.delta.blocks.items()
            },
        }


class _BlockMap:
    """Linear map from stacked block unknowns to ``vec`` of a channel perturbation."""

    def __init__(self, sys: LpvSystem, channels):
        self.sys = sys
        self.slots = []  # (channel, (i, j), shape, offset)
        off = 0
        for ch in channels:
            st = sys.pert.channel(ch)
            if st is None:
                continue
            for key in st.indices():
                shape = st.delta_shape(*key)
                self.slots.append((ch, key, shape, off))
                off += shape[0] * shape[1]
        self.size = off

    def matrix(self, channel, point):
        rows, cols = self.sys.channel_shape(channel)
        M = np.zeros((rows * cols, self.size), dtype=complex)
        st = self.sys.pert.channel(channel)
        z = point.full(channel)
        for ch, (i, j), shape, off in self.slots:
            if ch != channel:
                continue
            M[:, off:off + shape[0] * shape[1]] = z[i] * np.kron(st.D[(i, j)], st.E.T)
        return M

    def unpack(self, x) -> DeltaAssignment:
        out = {}
        for ch, key, shape, off in self.slots:
            out.setdefault(ch, {})[key] = x[off:off + shape[0] * shape[1]].reshape(shape)
        return DeltaAssignment(out)


def _solve(M, t, tol):
    x, *_ = np.linalg.lstsq(M, t, rcond=None)
    resid = np.linalg.norm(M @ x - t)
    return x if resid <= tol * max(1.0, np.linalg.norm(t)) else None


def _candidates(A, X, prop, tol):
    """(lambda, eigenvector, direct target for the second channel) per locus."""
    out_side = prop in _OUTPUT_SIDE
    halfplane = prop in (Property.STABILIZABILITY, Property.DETECTABILITY)
    if out_side:
        lam, V = np.linalg.eig(A)
    else:
        mu, V = np.linalg.eig(A.conj().T)
        lam = mu.conj()
    for k in range(len(lam)):
        if halfplane and lam[k].real < -tol:
            continue
        v = V[:, k:k + 1]
        v = v / np.linalg.norm(v)
        if out_side:
            target = -X @ v @ v.conj().T
        else:
            target = -v @ v.conj().T @ X
        yield complex(lam[k]), v, target


def construct_violation(sys: LpvSystem, domain: BoxDomain, prop="controllability", grid: int = 5,
                        max_points: int = 256, tol: float = DEFAULT_TOL) -> ViolationWitness:
    """Smallest structured perturbation found that destroys ``prop``.

    For each sampled parameter point and each locus ``lambda`` of ``A(z)``
    with eigenvector ``q`` (left for the input side, right for the output
    side) the target ``B~ = -q q* B / |q|^2`` (or ``C~ = -C q q* / |q|^2``)
    with ``A~ = 0`` is matched by least squares over the structured blocks.
    When the structure cannot produce that target exactly, the weaker
    conditions ``q* A~ = 0, q* B~ = -q* B`` (resp. ``A~ q = 0, C~ q = -C q``)
    are solved instead; they keep ``lambda`` an eigenvalue and make ``q``
    orthogonal to the input matrix.  Every candidate is re-checked with
    :func:`check_property_at` and the one with the smallest stacked norm
    is returned.

    Raises
    ------
    NominalAlreadyViolated
        The unperturbed system already lacks ``prop`` at a sampled point.
    NotExpressible
        No candidate could be realized by the perturbation structure.
    """
    prop = _supported(prop, minimality=True)
    if prop is Property.MINIMALITY:
        found = []
        for p in (Property.CONTROLLABILITY, Property.OBSERVABILITY):
            try:
                found.append(construct_violation(sys, domain, p, grid, max_points, tol))
            except NotExpressible:
                pass
        if not found:
            raise NotExpressible("neither side of the structure can realize a rank-dropping direction")
        return min(found, key=lambda w: w.norm)
    second = _second_channel(prop)
    out_side = prop in _OUTPUT_SIDE
    dom = domain.for_counts(sys.qs())
    points = dom.grid_points(grid)
    if len(points) > max_points:
        idx = np.linspace(0, len(points) - 1, max_points).round().astype(int)
        points = [points[i] for i in idx]
    for pt in points:
        if not check_property_at(sys, prop, pt, tol=tol).holds:
            raise NominalAlreadyViolated(f"nominal system is not {prop.value} at {pt}")
    bmap = _BlockMap(sys, ("A", second))
    if bmap.size == 0 or all(
        sys.pert.channel(ch) is None or sys.pert.channel(ch).is_trivial() for ch in ("A", second)
    ):
        raise NotExpressible(f"channels A and {second} carry no perturbation structure")
    n = sys.n
    best = None
    for pt in points:
        A, B, C, _ = total_matrices(sys, pt)
        X = C if out_side else B
        MA = bmap.matrix("A", pt)
        MX = bmap.matrix(second, pt)
        for lam, v, target in _candidates(A, X, prop, tol):
            tries = []
            x = _solve(np.vstack([MA, MX]), np.concatenate([np.zeros(n * n), target.reshape(-1)]), 1e-9)
            if x is not None:
                tries.append((x, "projection"))
            else:
                if out_side:
                    # vec(Y v) = kron(I, v^T) vec(Y) in row-major order
                    LA = np.kron(np.eye(n), v.T) @ MA
                    LX = np.kron(np.eye(X.shape[0]), v.T) @ MX
                    rhs = np.concatenate([np.zeros(n), -(X @ v).ravel()])
                else:
                    qh = v.conj().T
                    LA = np.kron(qh, np.eye(n)) @ MA
                    LX = np.kron(qh, np.eye(X.shape[1])) @ MX
                    rhs = np.concatenate([np.zeros(n), -(qh @ X).ravel()])
                x = _solve(np.vstack([LA, LX]), rhs, 1e-9)
                if x is not None:
                    tries.append((x, "constraints"))
            for x, method in tries:
                delta = bmap.unpack(x)
                kind = PbhKind.OBSERVABILITY if out_side else PbhKind.CONTROLLABILITY
                smin, smax = linalg.svd_extremes(assemble_pbh(sys, kind, lam, pt, delta))
                if smin > tol * max(1.0, smax):
                    continue
                if check_property_at(sys, prop, pt, delta, tol).holds:
                    continue
                norm = stacked_norm(sys, delta, prop)
                if best is None or norm < best.norm - 1e-12:
                    best = ViolationWitness(pt, delta, lam, smin, norm, method)
    if best is None:
        raise NotExpressible("the perturbation structure cannot realize a rank-dropping direction")
    return best


# -- sampled soundness ---------------------------------------------------------------------

@dataclass
class SoundnessReport:
    trials: int
    points_per_trial: int
    checks: int
    min_ratio: float
    counterexamples: list = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return not self.counterexamples


def random_admissible(sys: LpvSystem, radius: RadiusResult, rng, scale: float = 0.99,
                      complex_entries: bool = True) -> DeltaAssignment:
    """Random blocks whose stacked norm is ``u * scale * block_bound``, ``u`` in (0, 1]."""
    d = random_delta({ch: sys.pert.channel(ch) for ch in _channels(radius.property)}, rng, complex_entries)
    norm = stacked_norm(sys, d, radius.property)
    if norm == 0:
        return d
    u = 1.0 - rng.uniform(0.0, 1.0)
    return d.scaled(u * scale * radius.block_bound / norm)


def verify_radius(sys: LpvSystem, domain: BoxDomain, radius: RadiusResult, rng, trials: int = 100,
                  points: int = 20, tol: float = DEFAULT_TOL) -> SoundnessReport:
    """Check the property for random admissible perturbations at random points."""
    dom = domain.for_counts(sys.qs())
    rep = SoundnessReport(trials, points, 0, np.inf)
    for _ in range(trials):
        d = random_admissible(sys, radius, rng)
        for pt in dom.sample(rng, points):
            v = check_property_at(sys, radius.property, pt, d, tol)
            rep.checks += 1
            rep.min_ratio = min(rep.min_ratio, v.min_ratio)
            if not v.holds:
                rep.counterexamples.append((pt, d, v))
    return rep
