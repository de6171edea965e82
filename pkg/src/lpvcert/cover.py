"""Finite-cover positivity certification on boxes.

``certify_positive`` proves ``f >= floor`` on a box by tiling it with cells.
For a cell with lower corner ``a`` (the anchor) and widths ``w_k``,

    f(x) >= f(a) - sum_k w_k * M_k      for every x in the cell,

where ``M_k`` bounds ``|df/dx_k|`` over the cell.  A cell is certified when
the right-hand side stays at or above the floor; otherwise it is bisected
along the axis with the largest ``w_k * M_k``.  The derivative bounds are
estimated by central differences on a small subgrid times a safety factor,
so a certificate is as trustworthy as that estimate (it is not an interval
arithmetic proof).
"""

from __future__ import annotations

import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import EmptyBoxError

SAFETY = 2.0
OVERLAP = 1e-12


@dataclass(frozen=True)
class CoverBox:
    lower: tuple
    upper: tuple
    names: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise EmptyBoxError("lower and upper corners differ in dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_intervals(cls, intervals, names=()):
        intervals = list(intervals)
        return cls(tuple(a for a, _ in intervals), tuple(b for _, b in intervals), names)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def check(self):
        if self.dim == 0:
            raise EmptyBoxError("box has no coordinates")
        if not all(np.isfinite(self.lower)) or not all(np.isfinite(self.upper)):
            raise EmptyBoxError("box must be bounded")
        if any(a > b for a, b in zip(self.lower, self.upper)):
            raise EmptyBoxError("box has an interval with lower bound above upper bound")

    def split(self, k):
        mid = 0.5 * (self.lower[k] + self.upper[k])
        hi1 = list(self.upper)
        hi1[k] = mid
        lo2 = list(self.lower)
        lo2[k] = mid
        return CoverBox(self.lower, tuple(hi1), self.names), CoverBox(tuple(lo2), self.upper, self.names)

    def sample(self, rng, k):
        return rng.uniform(self.lower, self.upper, size=(k, self.dim))

    def intervals(self):
        return list(zip(self.lower, self.upper))


def _subgrid(box: CoverBox, per_axis):
    axes = []
    for k, (lo, hi) in enumerate(zip(box.lower, box.upper)):
        r = per_axis[k] if hi > lo else 1
        axes.append(np.linspace(lo, hi, r) if r > 1 else np.array([0.5 * (lo + hi)]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _central(f, x, k, box: CoverBox, step):
    lo, hi = box.lower[k], box.upper[k]
    a = max(lo, x[k] - step)
    b = min(hi, x[k] + step)
    if b <= a:
        return 0.0
    xa = np.array(x, dtype=float)
    xb = np.array(x, dtype=float)
    xa[k] = a
    xb[k] = b
    return (f(xb) - f(xa)) / (b - a)


def derivative_bound(f, box: CoverBox, index: int, points: int = 5, safety: float = SAFETY) -> float:
    """Estimate ``max |df/dx_index|`` over ``box``.

    Central differences are taken at ``points`` nodes along ``index`` and at
    the two ends and the middle of every other axis; the largest magnitude
    is multiplied by ``safety``.
    """
    box.check()
    if box.upper[index] == box.lower[index]:
        return 0.0
    per_axis = [3] * box.dim
    per_axis[index] = points
    step = 1e-4 * (box.upper[index] - box.lower[index])
    worst = 0.0
    for x in _subgrid(box, per_axis):
        worst = max(worst, abs(_central(f, x, index, box, step)))
    return safety * worst


@dataclass
class CellRecord:
    anchor: tuple
    widths: tuple
    value: float
    bounds: tuple
    decrement: float
    depth: int
    certified: bool

    def to_dict(self):
        return {
            "anchor": list(self.anchor),
            "widths": list(self.widths),
            "value": self.value,
            "bounds": list(self.bounds),
            "decrement": self.decrement,
            "depth": self.depth,
            "certified": self.certified,
        }


@dataclass
class CoverCertificate:
    """Outcome of :func:`certify_positive` with its cell statistics."""

    status: str  # "certified", "witness" or "inconclusive"
    floor: float
    mode: str
    cells_examined: int = 0
    certified_cells: int = 0
    max_depth: int = 0
    min_cell_value: float = float("inf")
    min_step: float = float("inf")
    max_step: float = 0.0
    max_bound: float = 0.0
    witness_point: tuple | None = None
    witness_value: float | None = None
    records: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    def recheck(self) -> bool:
        """Re-assert the cell inequality for every logged certified cell."""
        return all(r.value - r.decrement >= self.floor for r in self.records if r.certified)

    def to_dict(self):
        return {
            "status": self.status,
            "floor": self.floor,
            "mode": self.mode,
            "cells_examined": self.cells_examined,
            "certified_cells": self.certified_cells,
            "max_depth": self.max_depth,
            "min_cell_value": self.min_cell_value,
            "min_step": self.min_step,
            "max_step": self.max_step,
            "max_bound": self.max_bound,
            "witness_point": None if self.witness_point is None else list(self.witness_point),
            "witness_value": self.witness_value,
        }


def _decrement(widths, bounds, mode):
    active = widths > 0
    if mode == "uniform":
        if not active.any():
            return 0.0
        return float(active.sum() * widths.max() * bounds.max())
    return float(np.dot(widths, bounds))


def _evaluator(f, vectorized):
    if vectorized:
        return lambda X: np.asarray(f(np.atleast_2d(X)), dtype=float).reshape(-1)
    return lambda X: np.array([float(f(x)) for x in np.atleast_2d(X)])


def _probes(cell: CoverBox, active, count):
    """Deterministic low-discrepancy points inside ``cell`` (active axes only)."""
    x = np.tile(np.asarray(cell.lower, dtype=float), (count, 1))
    if not active or count == 0:
        return x[:0]
    u = qmc.Halton(d=len(active), scramble=False).random(count + 1)[1:]
    w = cell.widths[active]
    x[:, active] = np.asarray(cell.lower)[active] + u * w
    return x


def _examine(F, cell: CoverBox, per_axis, safety):
    """Anchor value, per-axis derivative bounds and the lowest sample.

    Derivatives are estimated by central differences at the subgrid nodes
    and at a few low-discrepancy probes, so that symmetric stationary points
    on the node lattice cannot hide a steep direction.  Secant slopes
    between neighbouring nodes also enter each bound.  All evaluation points
    are gathered first and passed to the batch evaluator ``F`` in one call.
    """
    anchor = np.asarray(cell.lower, dtype=float)
    widths = cell.widths
    active = [k for k in range(cell.dim) if widths[k] > 0]
    nodes = _subgrid(cell, per_axis)
    sites = np.vstack([nodes, _probes(cell, active, max(4, 2 * len(active)))])
    lo = np.asarray(cell.lower)
    hi = np.asarray(cell.upper)
    pts = [anchor[None, :], sites]
    spans = []
    for k in active:
        step = 1e-3 * widths[k]
        a = sites.copy()
        b = sites.copy()
        a[:, k] = np.maximum(lo[k], sites[:, k] - step)
        b[:, k] = np.minimum(hi[k], sites[:, k] + step)
        pts += [a, b]
        spans.append(b[:, k] - a[:, k])
    vals = F(np.vstack(pts))
    value = float(vals[0])
    r = len(sites)
    site_vals = vals[1:1 + r]
    grid_shape = [per_axis[k] if widths[k] > 0 and per_axis[k] > 1 else 1 for k in range(cell.dim)]
    grid_vals = site_vals[:len(nodes)].reshape(grid_shape)
    bounds = np.zeros(cell.dim)
    for idx, k in enumerate(active):
        fa = vals[1 + r + 2 * idx * r: 1 + r + (2 * idx + 1) * r]
        fb = vals[1 + r + (2 * idx + 1) * r: 1 + r + (2 * idx + 2) * r]
        slope = float(np.max(np.abs(fb - fa) / spans[idx]))
        if grid_shape[k] > 1:
            spacing = widths[k] / (grid_shape[k] - 1)
            slope = max(slope, float(np.max(np.abs(np.diff(grid_vals, axis=k)))) / spacing)
        bounds[k] = slope
    j = int(np.argmin(site_vals))
    if site_vals[j] < value:
        low_x, low_v = sites[j], float(site_vals[j])
    else:
        low_x, low_v = anchor, value
    return value, safety * bounds, low_x, low_v


def certify_positive(
    f,
    box: CoverBox,
    floor: float,
    budget: int = 100_000,
    mode: str = "sum",
    safety: float = SAFETY,
    overlap: float = OVERLAP,
    keep_records: bool = False,
    log=None,
    jobs: int = 1,
    subgrid: int | None = None,
    vectorized: bool = False,
) -> CoverCertificate:
    """Certify ``f >= floor`` on ``box`` by adaptive cell refinement.

    Parameters
    ----------
    f : callable
        Maps a point (1-D float array, one entry per box axis) to a float.
    box : CoverBox
    floor : float
        Positive level to certify.
    budget : int
        Maximum number of cells examined.
    mode : {"sum", "uniform"}
        ``"sum"`` uses the decrement ``sum_k w_k M_k``; ``"uniform"`` uses
        ``d * max_k w_k * max_k M_k`` with ``d`` the number of active axes.
    log : file-like, optional
        Receives one JSON record per examined cell.
    jobs : int
        Worker threads used to examine a batch of cells.
    vectorized : bool
        ``f`` takes a ``(k, dim)`` array and returns ``k`` values.

    Returns
    -------
    CoverCertificate
        ``status`` is ``"certified"`` when every cell passed, ``"witness"``
        when a point with ``f <= floor`` was found (``witness_point``), and
        ``"inconclusive"`` when the budget ran out first.
    """
    box.check()
    if floor <= 0:
        raise ValueError("floor must be positive")
    if mode not in ("sum", "uniform"):
        raise ValueError(f"unknown mode {mode!r}")
    F = _evaluator(f, vectorized)
    active = sum(1 for w in box.widths if w > 0)
    r = subgrid or (3 if active <= 2 else 2)
    per_axis = [r] * box.dim
    cert = CoverCertificate(status="inconclusive", floor=float(floor), mode=mode)
    queue = deque([(box, 0)])
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while queue:
            room = budget - cert.cells_examined
            if room <= 0:
                return cert
            batch = [queue.popleft() for _ in range(min(len(queue), room, 64 if pool else 1))]
            if pool:
                results = list(pool.map(lambda c: _examine(F, c[0], per_axis, safety), batch))
            else:
                results = [_examine(F, c[0], per_axis, safety) for c in batch]
            for (cell, depth), (value, bounds, low_x, low_v) in zip(batch, results):
                cert.cells_examined += 1
                cert.max_depth = max(cert.max_depth, depth)
                cert.min_cell_value = min(cert.min_cell_value, value)
                if low_v <= floor:
                    cert.status = "witness"
                    cert.witness_point = tuple(float(v) for v in low_x)
                    cert.witness_value = float(F(np.asarray(low_x, dtype=float))[0])
                    return cert
                widths = cell.widths + np.where(cell.widths > 0, overlap, 0.0)
                dec = _decrement(widths, bounds, mode)
                ok = value - dec >= floor
                cert.max_bound = max(cert.max_bound, float(bounds.max(initial=0.0)))
                if ok:
                    cert.certified_cells += 1
                    step = float(widths.max(initial=0.0))
                    cert.min_step = min(cert.min_step, step)
                    cert.max_step = max(cert.max_step, step)
                rec = CellRecord(cell.lower, tuple(widths.tolist()), value, tuple(bounds.tolist()), dec, depth, ok)
                if keep_records:
                    cert.records.append(rec)
                if log is not None:
                    log.write(json.dumps(rec.to_dict()) + "\n")
                if not ok:
                    k = int(np.argmax(cell.widths * np.maximum(bounds, 1e-300)))
                    a, b = cell.split(k)
                    queue.append((a, depth + 1))
                    queue.append((b, depth + 1))
        cert.status = "certified"
        return cert
    finally:
        if pool:
            pool.shutdown()
