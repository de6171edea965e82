"""Affine parameter-varying systems with structured multi-perturbations.

A nominal matrix function is affine in its parameter tuple,

    M(z) = M_0 + z_1 M_1 + ... + z_q M_q,

and each channel X in {A, B, C, D} may carry a structured perturbation

    X~(z) = sum_i z_i sum_j D_ij Delta_ij E,      with z_0 = 1,

where the left factors ``D_ij`` and the shared right factor ``E`` are fixed
and the blocks ``Delta_ij`` are free.  Parameter tuples never store the
implicit leading 1; block indices ``i`` start at 0 (the constant term) and
``j`` at 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import LengthMismatchError, ShapeMismatchError, UnboundedDomainError
from .linalg import as_matrix

CHANNELS = ("A", "B", "C", "D")
DELAY_CHANNELS = ("Ad", "Bd")


def _readonly(m):
    return as_matrix(m, readonly=True)


@dataclass(frozen=True)
class AffineFamily:
    """Coefficients ``M_0 .. M_q`` of an affine matrix function."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = self.coeffs
        if isinstance(coeffs, np.ndarray) and coeffs.ndim == 2:
            coeffs = (coeffs,)
        object.__setattr__(self, "coeffs", tuple(_readonly(c) for c in coeffs))

    @classmethod
    def constant(cls, m):
        return cls((m,))

    @property
    def q(self) -> int:
        return len(self.coeffs) - 1

    @property
    def shape(self):
        return self.coeffs[0].shape if self.coeffs else (0, 0)

    @property
    def consistent(self) -> bool:
        return bool(self.coeffs) and all(c.shape == self.coeffs[0].shape for c in self.coeffs)

    def is_real(self) -> bool:
        return all(not np.any(c.imag) for c in self.coeffs)


def evaluate_family(fam: AffineFamily, ztail) -> np.ndarray:
    """``M_0 + sum_i z_i M_i`` for the stored tail ``(z_1, .., z_q)``."""
    ztail = tuple(ztail)
    if len(ztail) != fam.q:
        raise LengthMismatchError(f"family has {fam.q} varying parameters, got {len(ztail)}")
    if not fam.consistent:
        raise ShapeMismatchError("family coefficients differ in shape")
    out = np.array(fam.coeffs[0], dtype=complex)
    for z, c in zip(ztail, fam.coeffs[1:]):
        if z != 0:
            out = out + z * c
    return out


@dataclass(frozen=True)
class ParameterPoint:
    """Values of the varying parameters, one tuple per channel.

    ``zAd``/``zBd`` parametrize the delayed families of a delay system and
    stay empty for delay-free systems.
    """

    zA: tuple = ()
    zB: tuple = ()
    zC: tuple = ()
    zD: tuple = ()
    zAd: tuple = ()
    zBd: tuple = ()

    def __post_init__(self):
        for name in ("zA", "zB", "zC", "zD", "zAd", "zBd"):
            object.__setattr__(self, name, tuple(complex(v) for v in getattr(self, name)))

    def tail(self, channel: str) -> tuple:
        return getattr(self, "z" + channel)

    def full(self, channel: str) -> np.ndarray:
        """The tuple with its implicit leading 1 restored."""
        return np.concatenate(([1.0 + 0j], np.asarray(self.tail(channel), dtype=complex)))

    def replace(self, **kw) -> "ParameterPoint":
        vals = {name: getattr(self, name) for name in ("zA", "zB", "zC", "zD", "zAd", "zBd")}
        vals.update(kw)
        return ParameterPoint(**vals)

    def conj(self) -> "ParameterPoint":
        return ParameterPoint(
            **{name: tuple(np.conj(getattr(self, name))) for name in ("zA", "zB", "zC", "zD", "zAd", "zBd")}
        )


@dataclass(frozen=True)
class ChannelStructure:
    """Left factors ``D[(i, j)]`` and the shared right factor ``E`` of a channel."""

    E: np.ndarray
    D: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "E", _readonly(self.E))
        blocks = {(int(i), int(j)): _readonly(d) for (i, j), d in dict(self.D).items()}
        object.__setattr__(self, "D", dict(sorted(blocks.items())))

    @property
    def ell(self) -> int:
        return self.E.shape[0]

    def indices(self):
        return list(self.D.keys())

    def delta_shape(self, i, j):
        return (self.D[(i, j)].shape[1], self.ell)

    def is_trivial(self) -> bool:
        return not self.D or not np.any(self.E) or not any(np.any(d) for d in self.D.values())


@dataclass(frozen=True)
class PerturbationStructure:
    A: ChannelStructure | None = None
    B: ChannelStructure | None = None
    C: ChannelStructure | None = None
    D: ChannelStructure | None = None

    def channel(self, name: str) -> ChannelStructure | None:
        return getattr(self, name)


@dataclass(frozen=True)
class DeltaAssignment:
    """Concrete values of the free blocks, keyed by channel then ``(i, j)``.

    Blocks that are absent are zero.
    """

    blocks: Mapping = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for ch, per in dict(self.blocks).items():
            clean[ch] = {(int(i), int(j)): _readonly(v) for (i, j), v in dict(per).items()}
        object.__setattr__(self, "blocks", clean)

    def get(self, channel, i, j):
        return self.blocks.get(channel, {}).get((i, j))

    def scaled(self, c) -> "DeltaAssignment":
        return DeltaAssignment({ch: {k: c * v for k, v in per.items()} for ch, per in self.blocks.items()})

    def is_zero(self) -> bool:
        return not any(np.any(v) for per in self.blocks.values() for v in per.values())


ZERO_DELTA = DeltaAssignment()


def random_delta(structures: Mapping[str, ChannelStructure | None], rng, complex_entries=True) -> DeltaAssignment:
    """Standard normal blocks for every structured channel in ``structures``."""
    out = {}
    for ch, st in structures.items():
        if st is None:
            continue
        per = {}
        for (i, j) in st.indices():
            shape = st.delta_shape(i, j)
            v = rng.standard_normal(shape)
            if complex_entries:
                v = v + 1j * rng.standard_normal(shape)
            per[(i, j)] = v
        out[ch] = per
    return DeltaAssignment(out)


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    field: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.field}: {self.message}"


@dataclass(frozen=True)
class LpvSystem:
    n: int
    m: int
    p: int
    famA: AffineFamily
    famB: AffineFamily
    famC: AffineFamily
    famD: AffineFamily
    pert: PerturbationStructure = field(default_factory=PerturbationStructure)

    @classmethod
    def from_matrices(cls, A, B, C=None, D=None, pert=None) -> "LpvSystem":
        """Build a system from matrices or coefficient lists.

        Each argument is either one matrix (a constant family) or a list of
        coefficient matrices ``[M_0, M_1, ...]``.  ``C`` defaults to the
        identity and ``D`` to zero.
        """
        famA, famB = _family(A), _family(B)
        n = famA.shape[0]
        m = famB.shape[1]
        famC = _family(np.eye(n) if C is None else C)
        p = famC.shape[0]
        famD = _family(np.zeros((p, m)) if D is None else D)
        return cls(n, m, p, famA, famB, famC, famD, pert or PerturbationStructure())

    def family(self, channel: str) -> AffineFamily:
        return getattr(self, "fam" + channel)

    def qs(self) -> dict:
        return {ch: self.family(ch).q for ch in CHANNELS}

    def channel_shape(self, channel: str):
        return {"A": (self.n, self.n), "B": (self.n, self.m), "C": (self.p, self.n), "D": (self.p, self.m)}[channel]

    def origin(self) -> ParameterPoint:
        q = self.qs()
        return ParameterPoint(*(tuple([0.0] * q[ch]) for ch in CHANNELS))

    def with_pert(self, pert: PerturbationStructure) -> "LpvSystem":
        return LpvSystem(self.n, self.m, self.p, self.famA, self.famB, self.famC, self.famD, pert)

    def is_real(self) -> bool:
        return all(self.family(ch).is_real() for ch in CHANNELS)


def _family(x) -> AffineFamily:
    if isinstance(x, AffineFamily):
        return x
    if isinstance(x, (list, tuple)) and x and all(np.ndim(c) == 2 for c in x):
        return AffineFamily(tuple(x))
    return AffineFamily((x,))


# -- assembly -----------------------------------------------------------------

def channel_term(structure: ChannelStructure | None, channel: str, i: int, delta: DeltaAssignment, shape):
    """``sum_j D_ij Delta_ij E`` for one parameter index ``i``."""
    out = np.zeros(shape, dtype=complex)
    if structure is None:
        return out
    for (ii, j), d in structure.D.items():
        if ii != i:
            continue
        blk = delta.get(channel, ii, j)
        if blk is None:
            continue
        if blk.shape != structure.delta_shape(ii, j):
            raise ShapeMismatchError(
                f"Delta[{channel}]({ii},{j}) has shape {blk.shape}, expected {structure.delta_shape(ii, j)}"
            )
        term = d @ blk @ structure.E
        if term.shape != tuple(shape):
            raise ShapeMismatchError(f"structured term for {channel} has shape {term.shape}, expected {shape}")
        out += term
    return out


def assemble_structured(structure, channel, zfull, delta, shape):
    out = np.zeros(shape, dtype=complex)
    if structure is None or delta is None:
        return out
    for i, z in enumerate(zfull):
        if z != 0:
            out += z * channel_term(structure, channel, i, delta, shape)
    return out


def assemble_perturbation(sys: LpvSystem, channel: str, point: ParameterPoint, delta: DeltaAssignment) -> np.ndarray:
    """The perturbation matrix of ``channel`` at ``point`` for the given blocks."""
    zfull = point.full(channel)
    if len(zfull) - 1 != sys.family(channel).q:
        raise ShapeMismatchError(
            f"point has {len(zfull) - 1} {channel}-parameters, system has {sys.family(channel).q}"
        )
    return assemble_structured(sys.pert.channel(channel), channel, zfull, delta, sys.channel_shape(channel))


def total_matrices(sys: LpvSystem, point: ParameterPoint, delta: DeltaAssignment | None = None):
    """Nominal plus perturbation for every channel, as ``(A, B, C, D)``."""
    delta = delta or ZERO_DELTA
    out = []
    for ch in CHANNELS:
        nominal = evaluate_family(sys.family(ch), point.tail(ch))
        if nominal.shape != sys.channel_shape(ch):
            raise ShapeMismatchError(f"fam{ch} has shape {nominal.shape}, expected {sys.channel_shape(ch)}")
        out.append(nominal + assemble_perturbation(sys, ch, point, delta))
    return tuple(out)


def per_index_perturbations(sys: LpvSystem, channel: str, delta: DeltaAssignment):
    """The list ``[X~_0, .., X~_q]`` of per-index perturbation matrices."""
    st = sys.pert.channel(channel)
    shape = sys.channel_shape(channel)
    return [channel_term(st, channel, i, delta, shape) for i in range(sys.family(channel).q + 1)]


def block_diag(a, b):
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]), dtype=complex)
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def stacked_delta(sys: LpvSystem, delta: DeltaAssignment, second: str = "B") -> np.ndarray:
    """Block matrix ``Delta_AB`` with ``(-A~ : B~) == factor_row(point) @ Delta_AB``.

    The upper-left block stacks ``A~_0, .., A~_qA`` vertically and the
    lower-right block stacks ``B~_0, .., B~_qB``; see :func:`factor_row`.
    With ``second="C"`` the output-side analogue is built: ``A~_i`` and
    ``C~_i`` are stacked side by side, so that ``(-A~; C~)`` factors as
    ``Delta_AC @ (-z_A (x) I; z_C (x) I)``.
    """
    a = per_index_perturbations(sys, "A", delta)
    x = per_index_perturbations(sys, second, delta)
    if second == "C":
        return block_diag(np.hstack(a), np.hstack(x))
    return block_diag(np.vstack(a), np.vstack(x))


def factor_row(sys: LpvSystem, point: ParameterPoint, first="A", second="B") -> np.ndarray:
    """``(-z_A (x) I_n : z_B (x) I_n)``, the parameter factor of the stacked form."""
    n = sys.n
    za = point.full(first)[None, :]
    zb = point.full(second)[None, :]
    return np.hstack([-np.kron(za, np.eye(n)), np.kron(zb, np.eye(n))])


# -- validation -----------------------------------------------------------------

def validate(sys: LpvSystem) -> list:
    """Shape diagnostics for ``sys``.  Never raises."""
    diags = []
    for name, val in (("n", sys.n), ("m", sys.m), ("p", sys.p)):
        if not isinstance(val, (int, np.integer)) or val < 1:
            diags.append(Diagnostic("error", name, f"dimension must be a positive integer, got {val!r}"))
    if diags:
        return diags
    for ch in CHANNELS:
        fam = sys.family(ch)
        want = sys.channel_shape(ch)
        if not fam.coeffs:
            diags.append(Diagnostic("error", f"fam{ch}", "family has no coefficients"))
            continue
        for i, c in enumerate(fam.coeffs):
            if c.shape != want:
                diags.append(Diagnostic("error", f"fam{ch}[{i}]", f"shape {c.shape[0]}x{c.shape[1]}, expected {want[0]}x{want[1]}"))
            elif not np.all(np.isfinite(c)):
                diags.append(Diagnostic("error", f"fam{ch}[{i}]", "non-finite entry"))
        st = sys.pert.channel(ch)
        if st is not None:
            diags.extend(_validate_structure(st, ch, want, fam.q, f"pert.{ch}"))
    if not (sys.p <= sys.m <= sys.n):
        diags.append(Diagnostic(
            "warning", "dimensions",
            f"expected p <= m <= n, got n={sys.n}, m={sys.m}, p={sys.p}; zero classification may be less informative",
        ))
    return diags


def _validate_structure(st: ChannelStructure, ch, want, q, where):
    diags = []
    if st.E.shape[1] != want[1]:
        diags.append(Diagnostic("error", f"{where}.E", f"E has {st.E.shape[1]} columns, expected {want[1]}"))
    for (i, j), d in st.D.items():
        if not 0 <= i <= q:
            diags.append(Diagnostic("error", f"{where}.D[{i},{j}]", f"index i={i} outside 0..{q}"))
        if j < 1:
            diags.append(Diagnostic("error", f"{where}.D[{i},{j}]", "block index j starts at 1"))
        if d.shape[0] != want[0]:
            diags.append(Diagnostic("error", f"{where}.D[{i},{j}]", f"D has {d.shape[0]} rows, expected {want[0]}"))
    return diags


def has_errors(diags) -> bool:
    return any(d.level == "error" for d in diags)


# -- recentering ------------------------------------------------------------------

def recenter(sys: LpvSystem, z0: ParameterPoint) -> LpvSystem:
    """Move the nominal system to ``z0`` and absorb the parameter variation.

    The returned system has constant nominal families equal to their values
    at ``z0``.  Each channel with varying parameters gets one extra block
    per index: ``D = X_i`` for ``i >= 1`` and ``D = -sum_i z0_i X_i`` for
    ``i = 0``, acting through an identity appended to ``E``.  Pair it with
    :func:`recenter_delta`, which maps block values of ``sys`` to the
    recentered structure (extra blocks set to the identity), to reproduce
    the original total matrices.
    """
    for ch in CHANNELS:
        if len(z0.tail(ch)) != sys.family(ch).q:
            raise LengthMismatchError(f"z0 has {len(z0.tail(ch))} {ch}-parameters, system has {sys.family(ch).q}")
    fams = {}
    structs = {}
    for ch in CHANNELS:
        fam = sys.family(ch)
        st = sys.pert.channel(ch)
        if fam.q == 0:
            fams[ch] = fam
            structs[ch] = st
            continue
        at_z0 = evaluate_family(fam, z0.tail(ch))
        zeros = np.zeros_like(at_z0)
        fams[ch] = AffineFamily((at_z0,) + (zeros,) * fam.q)
        cols = fam.shape[1]
        E = np.eye(cols) if st is None else np.vstack([st.E, np.eye(cols)])
        blocks = dict(st.D) if st is not None else {}
        jnew = max([j for (_, j) in blocks] + [0]) + 1
        offset = -sum(z * c for z, c in zip(z0.tail(ch), fam.coeffs[1:]))
        blocks[(0, jnew)] = offset
        for i in range(1, fam.q + 1):
            blocks[(i, jnew)] = fam.coeffs[i]
        structs[ch] = ChannelStructure(E, blocks)
    return LpvSystem(
        sys.n, sys.m, sys.p, fams["A"], fams["B"], fams["C"], fams["D"],
        PerturbationStructure(**structs),
    )


def recenter_delta(sys: LpvSystem, delta: DeltaAssignment) -> DeltaAssignment:
    """Map blocks of ``sys`` onto the structure produced by :func:`recenter`."""
    out = {ch: dict(per) for ch, per in delta.blocks.items()}
    for ch in CHANNELS:
        fam = sys.family(ch)
        if fam.q == 0:
            continue
        st = sys.pert.channel(ch)
        cols = fam.shape[1]
        ell = st.ell if st is not None else 0
        per = {}
        for key, blk in delta.blocks.get(ch, {}).items():
            per[key] = np.hstack([blk, np.zeros((blk.shape[0], cols))])
        jnew = max([j for (_, j) in (st.D if st is not None else {})] + [0]) + 1
        ident = np.hstack([np.zeros((cols, ell)), np.eye(cols)])
        for i in range(fam.q + 1):
            per[(i, jnew)] = ident
        out[ch] = per
    return DeltaAssignment(out)


# -- domains -------------------------------------------------------------------------

Interval = tuple  # (lo, hi)


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box in the complex parameter space.

    Each channel maps to a tuple of coordinates; each coordinate is a pair
    ``((re_lo, re_hi), (im_lo, im_hi))``.  A real coordinate has the
    degenerate imaginary interval ``(0, 0)``.
    """

    segments: Mapping = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for ch, coords in dict(self.segments).items():
            clean[ch] = tuple(
                ((float(re[0]), float(re[1])), (float(im[0]), float(im[1]))) for re, im in coords
            )
        object.__setattr__(self, "segments", clean)

    @classmethod
    def real(cls, **channels) -> "BoxDomain":
        """Real box from ``channel=[(lo, hi), ...]`` keywords."""
        return cls({ch: tuple((tuple(iv), (0.0, 0.0)) for iv in ivs) for ch, ivs in channels.items()})

    @classmethod
    def singleton(cls, point: ParameterPoint) -> "BoxDomain":
        segs = {}
        for ch in CHANNELS + DELAY_CHANNELS:
            tail = point.tail(ch)
            if tail:
                segs[ch] = tuple(((z.real, z.real), (z.imag, z.imag)) for z in tail)
        return cls(segs)

    def coords(self, channel):
        return self.segments.get(channel, ())

    def for_counts(self, counts: Mapping) -> "BoxDomain":
        """Pad missing channels/coordinates with the degenerate point 0."""
        segs = {}
        for ch, q in counts.items():
            have = list(self.coords(ch))
            if len(have) > q:
                raise LengthMismatchError(f"domain has {len(have)} {ch}-coordinates, system has {q}")
            have += [((0.0, 0.0), (0.0, 0.0))] * (q - len(have))
            if q:
                segs[ch] = tuple(have)
        return BoxDomain(segs)

    def check_bounded(self):
        for ch, coords in self.segments.items():
            for k, (re, im) in enumerate(coords):
                for lo, hi in (re, im):
                    if not (np.isfinite(lo) and np.isfinite(hi)):
                        raise UnboundedDomainError(
                            f"coordinate {ch}[{k + 1}] is unbounded; controllability cannot be "
                            "preserved under structured perturbation on an unbounded domain in general"
                        )
                    if lo > hi:
                        raise ValueError(f"coordinate {ch}[{k + 1}] has lower bound above upper bound")

    def axes(self):
        """All real axes as ``(channel, index, part, lo, hi)``; part is 0 (re) or 1 (im)."""
        out = []
        for ch in CHANNELS + DELAY_CHANNELS:
            for k, pair in enumerate(self.coords(ch)):
                for part in (0, 1):
                    lo, hi = pair[part]
                    out.append((ch, k, part, lo, hi))
        return out

    def free_axes(self, channels=None):
        return [a for a in self.axes() if a[4] > a[3] and (channels is None or a[0] in channels)]

    def lower_point(self) -> ParameterPoint:
        return self.point_from({})

    def center(self) -> ParameterPoint:
        return self.point_from({(ch, k, part): 0.5 * (lo + hi) for ch, k, part, lo, hi in self.axes()})

    def point_from(self, values: Mapping) -> ParameterPoint:
        """Point with ``values[(channel, index, part)]`` and lower bounds elsewhere."""
        tails = {}
        for ch in CHANNELS + DELAY_CHANNELS:
            zs = []
            for k, (re, im) in enumerate(self.coords(ch)):
                r = values.get((ch, k, 0), re[0])
                i = values.get((ch, k, 1), im[0])
                zs.append(complex(r, i))
            tails["z" + ch] = tuple(zs)
        return ParameterPoint(**tails)

    def _axis_values(self, n_per):
        per_axis = []
        for ch, k, part, lo, hi in self.axes():
            if hi > lo:
                per_axis.append(((ch, k, part), np.linspace(lo, hi, n_per)))
            else:
                per_axis.append(((ch, k, part), np.array([lo])))
        return per_axis

    def grid_points(self, n_per: int = 9) -> list:
        """Tensor grid with ``n_per`` points on every non-degenerate axis."""
        self.check_bounded()
        per_axis = self._axis_values(n_per)
        keys = [k for k, _ in per_axis]
        out = []
        for combo in itertools.product(*[v for _, v in per_axis]):
            out.append(self.point_from(dict(zip(keys, combo))))
        return out

    def boundary_points(self, n_per: int = 9) -> list:
        """Grid points on at least one face of the box (the center if degenerate)."""
        self.check_bounded()
        per_axis = self._axis_values(n_per)
        if all(len(v) == 1 for _, v in per_axis):
            return [self.lower_point()]
        keys = [k for k, _ in per_axis]
        out = []
        for combo in itertools.product(*[v for _, v in per_axis]):
            on_face = any(
                len(vals) > 1 and (c == vals[0] or c == vals[-1])
                for c, (_, vals) in zip(combo, per_axis)
            )
            if on_face:
                out.append(self.point_from(dict(zip(keys, combo))))
        return out

    def sample(self, rng, k: int) -> list:
        self.check_bounded()
        axes = self.axes()
        out = []
        for _ in range(k):
            vals = {(ch, idx, part): (rng.uniform(lo, hi) if hi > lo else lo) for ch, idx, part, lo, hi in axes}
            out.append(self.point_from(vals))
        return out

    def shrink_around(self, point: ParameterPoint, half_widths: Mapping) -> "BoxDomain":
        """Sub-box centred on ``point`` with the given half-width per axis, clipped."""
        segs = {}
        for ch in CHANNELS + DELAY_CHANNELS:
            coords = []
            for k, (re, im) in enumerate(self.coords(ch)):
                z = point.tail(ch)[k]
                pair = []
                for part, (lo, hi), c in ((0, re, z.real), (1, im, z.imag)):
                    w = half_widths.get((ch, k, part), 0.0)
                    pair.append((max(lo, c - w), min(hi, c + w)) if hi > lo else (lo, hi))
                coords.append(tuple(pair))
            if coords:
                segs[ch] = tuple(coords)
        return BoxDomain(segs)

    def is_real(self) -> bool:
        return all(im == (0.0, 0.0) for coords in self.segments.values() for _, im in coords)

    def contains(self, point: ParameterPoint, tol=0.0) -> bool:
        for ch in CHANNELS + DELAY_CHANNELS:
            tail = point.tail(ch)
            coords = self.coords(ch)
            if len(tail) != len(coords):
                return False
            for z, (re, im) in zip(tail, coords):
                if not (re[0] - tol <= z.real <= re[1] + tol and im[0] - tol <= z.imag <= im[1] + tol):
                    return False
        return True


def default_domain(sys: LpvSystem) -> BoxDomain:
    """The singleton domain at the parameter origin."""
    return BoxDomain.singleton(sys.origin())


def fold_perturbation(fam: AffineFamily, structure: ChannelStructure | None, key: str,
                      delta: DeltaAssignment | None, shape) -> AffineFamily:
    """The family ``X(z) + X~(z)`` for fixed blocks, as one affine family."""
    if structure is None or delta is None:
        return fam
    return AffineFamily(tuple(c + channel_term(structure, key, i, delta, shape) for i, c in enumerate(fam.coeffs)))


def evaluate_batch(fam: AffineFamily, ztails, k: int) -> np.ndarray:
    """Evaluate ``fam`` at ``k`` parameter tails given as a ``(k, q)`` array."""
    coeffs = np.stack(fam.coeffs)
    if fam.q == 0:
        return np.broadcast_to(coeffs[0], (k,) + coeffs[0].shape)
    Z = np.asarray(ztails, dtype=complex).reshape(k, fam.q)
    return coeffs[0][None] + np.einsum("kq,qrc->krc", Z, coeffs[1:])
