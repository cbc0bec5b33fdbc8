"""Competitive-ratio function for the step-activation algorithm and its certification.

For the largest item's statistics ``(x0, h0)``, an invariant parameter ``s`` and
thresholds ``b0 <= b1 <= b2``, the guaranteed per-pair acceptance ratio is the
minimum of four integrals of ``exp(-K(t))`` and ``exp(-K(t)) * (1 - L(t))``,
where ``K`` is the cumulative activation rate of all other items and ``L`` the
activation probability of the largest item before ``t``.  Both are piecewise
linear, so all four integrals have closed forms.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .hfunc import h_eval

MASS_TOL = 1e-12
SERIES_CUTOFF = 1e-3


# ---------------------------------------------------------------------------
# piecewise-linear functions and exact integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BreakpointFn:
    """Continuous piecewise-linear function on [0, 1]."""

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    value0: float = 0.0

    def __post_init__(self):
        b = self.breakpoints
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(hi < lo for lo, hi in zip(b[:-1], b[1:])):
            raise ValueError("breakpoints must be ascending")
        if len(self.slopes) != len(b) - 1:
            raise ValueError("need one slope per segment")

    @classmethod
    def from_hinges(cls, base_slope: float, hinges: Iterable[tuple[float, float]]) -> "BreakpointFn":
        """``base_slope * t + sum(c * (t - at)^+ for at, c in hinges)``."""
        hinges = sorted((float(a), float(c)) for a, c in hinges)
        pts = [0.0] + [a for a, _ in hinges if 0.0 < a < 1.0] + [1.0]
        pts = sorted(set(pts))
        slopes = []
        for lo in pts[:-1]:
            slopes.append(base_slope + sum(c for a, c in hinges if a <= lo))
        return cls(tuple(pts), tuple(slopes), 0.0)

    def knots(self) -> np.ndarray:
        """Values at the breakpoints."""
        b = np.asarray(self.breakpoints)
        return self.value0 + np.concatenate([[0.0], np.cumsum(np.diff(b) * np.asarray(self.slopes))])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        b = np.asarray(self.breakpoints)
        k = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(self.slopes) - 1)
        return self.knots()[k] + np.asarray(self.slopes)[k] * (t - b[k])

    def slope_at(self, t: float) -> float:
        b = np.asarray(self.breakpoints)
        k = int(np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(self.slopes) - 1))
        return self.slopes[k]


ZERO = BreakpointFn((0.0, 1.0), (0.0,), 0.0)


def exp_moments(m, d):
    """``I0 = int_0^d exp(-m t) dt`` and ``I1 = int_0^d t exp(-m t) dt`` (vectorized).

    Small ``m*d`` uses a Taylor series to avoid cancellation.
    """
    m = np.asarray(m, dtype=float)
    d = np.asarray(d, dtype=float)
    x = m * d
    small = np.abs(x) < SERIES_CUTOFF
    safe_m = np.where(small, 1.0, m)
    xs = np.where(small, x, 0.0)
    xl = np.where(small, 1.0, x)
    i0_series = d * (1 - xs / 2 + xs**2 / 6 - xs**3 / 24 + xs**4 / 120)
    i1_series = d * d * (0.5 - xs / 3 + xs**2 / 8 - xs**3 / 30 + xs**4 / 144)
    em = -np.expm1(-xl)
    i0 = np.where(small, i0_series, em / safe_m)
    i1 = np.where(small, i1_series, (em - xl * np.exp(-xl)) / safe_m**2)
    return i0, i1


def _merged_cuts(fns: Sequence[BreakpointFn], a: float, b: float) -> np.ndarray:
    pts = {a, b}
    for f in fns:
        pts.update(p for p in f.breakpoints if a < p < b)
    return np.array(sorted(pts))


def int_exp_neg(K: BreakpointFn, a: float, b: float) -> float:
    """Exact ``int_a^b exp(-K(t)) dt``."""
    return int_exp_neg_affine(K, None, a, b)


def int_exp_neg_affine(K: BreakpointFn, L: BreakpointFn | None, a: float, b: float) -> float:
    """Exact ``int_a^b exp(-K(t)) * (1 - L(t)) dt``; ``L=None`` means ``L = 0``."""
    if not 0.0 <= a <= b <= 1.0:
        raise ValueError(f"need 0 <= a <= b <= 1, got [{a}, {b}]")
    if a == b:
        return 0.0
    fns = [K] if L is None else [K, L]
    cuts = _merged_cuts(fns, a, b)
    lo = cuts[:-1]
    d = np.diff(cuts)
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    k0 = K(lo)
    m = np.array([K.slope_at(t) for t in mid])
    i0, i1 = exp_moments(m, d)
    if L is None:
        return float(np.sum(np.exp(-k0) * i0))
    u0 = 1.0 - L(lo)
    w = -np.array([L.slope_at(t) for t in mid])
    return float(np.sum(np.exp(-k0) * (u0 * i0 + w * i1)))


# ---------------------------------------------------------------------------
# K, L and the ratio function
# ---------------------------------------------------------------------------


def build_K(x0: float, h_ot: float, s: float, beta1: float) -> BreakpointFn:
    """Cumulative rate of the non-largest items: h_ot*t + s(1-x0-h_ot)(t-b1)^+."""
    if not -MASS_TOL <= h_ot <= 1.0 - x0 + MASS_TOL:
        raise ValueError(f"h_ot={h_ot} outside [0, 1-x0]")
    if not 0.0 <= beta1 <= 1.0:
        raise ValueError(f"beta1={beta1} outside [0, 1]")
    return BreakpointFn.from_hinges(h_ot, [(beta1, s * (1.0 - x0 - h_ot))])


def build_L(x0: float, h0: float, s: float, beta0: float, beta2: float) -> BreakpointFn:
    """Activation probability of the largest item before t."""
    if not 0.0 <= h0 <= x0 + MASS_TOL:
        raise ValueError(f"need 0 <= h0 <= x0, got h0={h0}, x0={x0}")
    if not 0.0 <= beta0 <= beta2 <= 1.0:
        raise ValueError("need 0 <= beta0 <= beta2 <= 1")
    L = BreakpointFn.from_hinges(0.0, [(beta0, h0), (beta2, s * (x0 - h0))])
    end = float(L(1.0))
    if end > 1.0 + MASS_TOL:
        raise ValueError(f"L(1) = {end:.6g} > 1: inconsistent (x0, h0, s, betas)")
    return L


def h_other(x0: float, h0: float, s: float) -> float:
    """Total first-stage rate of the non-largest items, min(h_s(x0) - h0, 1 - x0)."""
    return max(0.0, min(h_eval(s, x0) - h0, 1.0 - x0))


@dataclass(frozen=True)
class GammaPoint:
    x0: float
    h0: float
    s: float
    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError("x0 outside [0, 1]")
        if not 0.0 <= self.h0 <= self.x0 + MASS_TOL:
            raise ValueError("h0 outside [0, x0]")
        if not self.s > 1:
            raise ValueError("s must exceed 1")
        if not 0.0 <= self.beta0 <= self.beta1 <= self.beta2 <= 1.0:
            raise ValueError("need 0 <= beta0 <= beta1 <= beta2 <= 1")

    @property
    def h_ot(self) -> float:
        return h_other(self.x0, self.h0, self.s)

    @property
    def betas(self) -> tuple[float, float, float]:
        return (self.beta0, self.beta1, self.beta2)


def gamma_terms(pt: GammaPoint) -> tuple[float, float, float, float]:
    """The four quantities whose minimum is the ratio."""
    K = build_K(pt.x0, pt.h_ot, pt.s, pt.beta1)
    L = build_L(pt.x0, pt.h0, pt.s, pt.beta0, pt.beta2)
    return (
        int_exp_neg(K, pt.beta0, 1.0),
        pt.s * int_exp_neg(K, pt.beta2, 1.0),
        int_exp_neg_affine(K, L, 0.0, 1.0),
        pt.s * int_exp_neg_affine(K, L, pt.beta1, 1.0),
    )


def gamma_eval(pt: GammaPoint) -> float:
    return min(gamma_terms(pt))


def gamma_batch(x0: float, h0: float, s: float, b0, b1, b2, h_ot: float | None = None) -> np.ndarray:
    """Ratio for many threshold triples at once (must satisfy b0 <= b1 <= b2).

    Triples whose largest-item activation mass L(1) exceeds 1 get ``-inf``.
    """
    if h_ot is None:
        h_ot = h_other(x0, h0, s)
    b0, b1, b2 = (np.asarray(b, dtype=float) for b in (b0, b1, b2))
    k_late = h_ot + s * (1.0 - x0 - h_ot)
    l_late = s * x0 - (s - 1.0) * h0
    edges = (np.zeros_like(b0), b0, b1, b2, np.ones_like(b0))
    k_slopes = (h_ot, h_ot, k_late, k_late)
    l_slopes = (0.0, h0, h0, l_late)
    K = np.zeros_like(b0)
    L = np.zeros_like(b0)
    E, F = [], []
    for j in range(4):
        d = edges[j + 1] - edges[j]
        i0, i1 = exp_moments(np.full_like(d, k_slopes[j]), d)
        ek = np.exp(-K)
        E.append(ek * i0)
        F.append(ek * ((1.0 - L) * i0 - l_slopes[j] * i1))
        K = K + k_slopes[j] * d
        L = L + l_slopes[j] * d
    t1 = E[1] + E[2] + E[3]
    t2 = s * E[3]
    t3 = F[0] + F[1] + F[2] + F[3]
    t4 = s * (F[2] + F[3])
    out = np.minimum(np.minimum(t1, t2), np.minimum(t3, t4))
    return np.where(L > 1.0 + MASS_TOL, -np.inf, out)


def _moments(m: float, d: float) -> tuple[float, float]:
    x = m * d
    if abs(x) < SERIES_CUTOFF:
        return (d * (1 - x / 2 + x * x / 6 - x**3 / 24 + x**4 / 120),
                d * d * (0.5 - x / 3 + x * x / 8 - x**3 / 30 + x**4 / 144))
    em = -math.expm1(-x)
    return em / m, (em - x * math.exp(-x)) / (m * m)


def gamma_scalar(x0: float, h0: float, s: float, h_ot: float, b0: float, b1: float, b2: float) -> float:
    """Scalar twin of :func:`gamma_batch` in plain floats (used by the polish step)."""
    k_late = h_ot + s * (1.0 - x0 - h_ot)
    l_late = s * x0 - (s - 1.0) * h0
    lengths = (b0, b1 - b0, b2 - b1, 1.0 - b2)
    k_slopes = (h_ot, h_ot, k_late, k_late)
    l_slopes = (0.0, h0, h0, l_late)
    K = L = 0.0
    E = [0.0] * 4
    F = [0.0] * 4
    for j in range(4):
        d = lengths[j]
        i0, i1 = _moments(k_slopes[j], d)
        ek = math.exp(-K)
        E[j] = ek * i0
        F[j] = ek * ((1.0 - L) * i0 - l_slopes[j] * i1)
        K += k_slopes[j] * d
        L += l_slopes[j] * d
    if L > 1.0 + MASS_TOL:
        return -math.inf
    return min(E[1] + E[2] + E[3], s * E[3], F[0] + F[1] + F[2] + F[3], s * (F[2] + F[3]))


def warmup_terms(h: float, beta: float = 0.367) -> tuple[float, float]:
    """Per-stage integrals of the two-stage step rule with total rates h then 2-h."""
    a = beta if h == 0 else (1.0 - math.exp(-h * beta)) / h
    b = (math.exp(-h * beta) - math.exp(-(2.0 - h) + (2.0 - 2.0 * h) * beta)) / (2.0 - h)
    return a, b


# ---------------------------------------------------------------------------
# threshold search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpec:
    coarse: int = 50
    rounds: int = 6
    stencil: int = 2
    max_moves: int = 200
    polish: bool = True
    polish_scale: float = 0.02
    polish_evals: int = 2000


_TRIPLES: dict[int, np.ndarray] = {}


def _coarse(n: int) -> np.ndarray:
    if n not in _TRIPLES:
        _TRIPLES[n] = np.array(list(itertools.combinations_with_replacement(range(n + 1), 3)))
    return _TRIPLES[n]


def gamma_lattice(x0: float, h0: float, s: float, idx: np.ndarray, n: int,
                  h_ot: float | None = None) -> np.ndarray:
    """:func:`gamma_batch` for integer triples ``idx / n``.

    Segment lengths are multiples of ``1/n``, so every exponential comes from
    a table of ``n + 1`` entries per slope.
    """
    if h_ot is None:
        h_ot = h_other(x0, h0, s)
    k_late = h_ot + s * (1.0 - x0 - h_ot)
    l_late = s * x0 - (s - 1.0) * h0
    d_grid = np.arange(n + 1) / n
    tables = {}
    for m in {h_ot, k_late}:
        i0, i1 = exp_moments(np.full(n + 1, m), d_grid)
        tables[m] = (np.exp(-m * d_grid), i0, i1)
    i = idx.T
    lengths = (i[0], i[1] - i[0], i[2] - i[1], n - i[2])
    k_slopes = (h_ot, h_ot, k_late, k_late)
    l_slopes = (0.0, h0, h0, l_late)
    ek = np.ones(len(idx))
    L = np.zeros(len(idx))
    E, F = [], []
    for j in range(4):
        decay, i0t, i1t = tables[k_slopes[j]]
        k = lengths[j]
        i0 = i0t[k]
        E.append(ek * i0)
        F.append(ek * ((1.0 - L) * i0 - l_slopes[j] * i1t[k]))
        ek = ek * decay[k]
        L = L + l_slopes[j] * d_grid[k]
    t1 = E[1] + E[2] + E[3]
    t2 = s * E[3]
    t3 = F[0] + F[1] + F[2] + F[3]
    t4 = s * (F[2] + F[3])
    out = np.minimum(np.minimum(t1, t2), np.minimum(t3, t4))
    return np.where(L > 1.0 + MASS_TOL, -np.inf, out)


def _stencil(width: int) -> np.ndarray:
    r = range(-width, width + 1)
    return np.array([o for o in itertools.product(r, repeat=3) if any(o)], dtype=float)


def _pick(vals: np.ndarray, cand: np.ndarray) -> int:
    """Best candidate; exact ties go to the lexicographically smallest triple."""
    top = np.max(vals)
    idx = np.flatnonzero(vals == top)
    if len(idx) == 1:
        return int(idx[0])
    order = np.lexsort(cand[idx].T[::-1])
    return int(idx[order[0]])


def optimize_betas(x0: float, h0: float, s: float, spec: SearchSpec = SearchSpec(),
                   start: Sequence[float] | None = None) -> tuple[tuple[float, float, float], float]:
    """Maximize the ratio over ordered thresholds.

    Without ``start`` the search scans the full ordered grid at step
    ``1/spec.coarse``; with ``start`` (a warm start) it begins there.  Then a
    pattern search moves on a ``(2*stencil+1)^3`` stencil until no neighbour
    improves, halving the step ``spec.rounds`` times.  Deterministic.
    """
    h_ot = h_other(x0, h0, s)
    coarse_step = 1.0 / spec.coarse
    if start is None:
        idx = _coarse(spec.coarse)
        vals = gamma_lattice(x0, h0, s, idx, spec.coarse, h_ot=h_ot)
        k = _pick(vals, idx)
        best = idx[k] / spec.coarse
        best_val = float(gamma_batch(x0, h0, s, *best[:, None], h_ot=h_ot)[0])
        steps = [coarse_step / 2**r for r in range(1, spec.rounds + 1)]
    else:
        best = np.array(start, dtype=float)
        best_val = float(gamma_batch(x0, h0, s, *best[:, None], h_ot=h_ot)[0])
        steps = [coarse_step / 2**r for r in range(0, spec.rounds + 1)]
    off = _stencil(spec.stencil)
    for step in steps:
        for _ in range(spec.max_moves):
            cand = np.clip(best + off * step, 0.0, 1.0)
            cand = cand[(cand[:, 0] <= cand[:, 1]) & (cand[:, 1] <= cand[:, 2])]
            vals = gamma_batch(x0, h0, s, *cand.T, h_ot=h_ot)
            k = _pick(vals, cand)
            if vals[k] <= best_val:
                break
            best, best_val = cand[k], float(vals[k])
    if spec.polish:
        best, best_val = _polish(x0, h0, s, h_ot, best, best_val, spec)
    return tuple(float(b) for b in best), best_val


def _polish(x0, h0, s, h_ot, best, best_val, spec: SearchSpec):
    """Nelder-Mead from the pattern-search incumbent; kept only if it improves.

    The ratio is a minimum of four smooth terms, so its maximum often sits on
    a narrow ridge that axis-aligned stencils cannot follow.
    """

    def project(y):
        c = np.clip(y, 0.0, 1.0)
        return np.maximum.accumulate(c)

    def neg(y):
        c = project(y)
        return -gamma_scalar(x0, h0, s, h_ot, c[0], c[1], c[2])

    simplex = np.vstack([best, best + spec.polish_scale * np.eye(3)])
    res = minimize(neg, best, method="Nelder-Mead",
                   options=dict(initial_simplex=simplex, xatol=1e-8, fatol=1e-12,
                                maxfev=spec.polish_evals))
    cand = project(res.x)
    val = float(gamma_batch(x0, h0, s, *cand[:, None], h_ot=h_ot)[0])
    if val > best_val:
        return cand, val
    return best, best_val


# ---------------------------------------------------------------------------
# grid certification
# ---------------------------------------------------------------------------

# (upper end of the x0 range, s); ranges are (previous upper, upper]
Schedule = tuple[tuple[float, float], ...]
CONSTANT_2: Schedule = ((1.0, 2.0),)
FULL_SCHEDULE: Schedule = ((0.35, 3.0), (0.6, 2.5), (1.0, 2.0))


def schedule_s(schedule: Schedule, x0: float) -> float:
    for upper, s in schedule:
        if x0 <= upper + 1e-12:
            return s
    raise ValueError(f"schedule does not cover x0={x0}")


def rounding_error_factor(s: float) -> float:
    """Coefficient of epsilon in the worst-case loss from rounding (x0, h0) down."""
    return 1.5 * s * s + 0.5 * s


@dataclass
class CellResult:
    x0: float
    h0: float
    s: float
    betas: tuple[float, float, float]
    gamma: float
    margin: float


@dataclass
class Certificate:
    epsilon: float
    target: float
    schedule: Schedule
    passed: bool
    worst: CellResult
    cells: int
    failed_cells: int
    rows: list[int] | None = field(default=None)
    cell_values: list[CellResult] | None = field(default=None, repr=False)

    def retarget(self, target: float) -> "Certificate":
        """Same grid judged against another target (needs ``keep_cells=True``)."""
        if self.cell_values is None:
            raise ValueError("certificate was built without keep_cells")
        shift = self.target - target
        cells = [CellResult(c.x0, c.h0, c.s, c.betas, c.gamma, c.margin + shift) for c in self.cell_values]
        worst = min(cells, key=lambda c: c.margin)
        failed = sum(c.margin <= 0 for c in cells)
        return Certificate(self.epsilon, target, self.schedule, failed == 0, worst, self.cells, failed,
                           self.rows, cells)

    def to_dict(self) -> dict:
        out = {
            "epsilon": self.epsilon,
            "target": self.target,
            "passed": self.passed,
            "worst": asdict(self.worst),
            "schedule": [list(p) for p in self.schedule],
            "cells": self.cells,
            "failed_cells": self.failed_cells,
        }
        out["worst"]["betas"] = list(self.worst.betas)
        if self.rows is not None:
            out["rows"] = self.rows
        return out


def _certify_row(args) -> tuple[CellResult, int, int, list[CellResult]]:
    i, n, schedule, target, spec, warm = args
    eps = 1.0 / n
    x0 = i / n
    s = schedule_s(schedule, x0)
    penalty = rounding_error_factor(s) * eps
    worst = None
    failed = 0
    prev = None
    row = []
    for j in range(i + 1):
        h0 = j / n
        betas, _ = optimize_betas(x0, h0, s, spec, start=prev if warm else None)
        prev = betas
        # re-verify the witness through the generic closed-form path
        g = gamma_eval(GammaPoint(x0, h0, s, *betas))
        cell = CellResult(x0, h0, s, betas, g, g - penalty - target)
        row.append(cell)
        if cell.margin <= 0:
            failed += 1
        if worst is None or cell.margin < worst.margin:
            worst = cell
    return worst, failed, i + 1, row


def certify_grid(epsilon: float, schedule: Schedule, target: float, spec: SearchSpec = SearchSpec(),
                 threads: int = 1, warm_start: bool = False,
                 rows: Sequence[int] | None = None, keep_cells: bool = False) -> Certificate:
    """Check ``Gamma - (1.5 s^2 + 0.5 s) * eps > target`` on every grid cell.

    Cells are ``(x0, h0) = (i*eps, j*eps)`` with ``j <= i``.  ``rows`` limits
    the check to selected ``i`` (a partial certificate).  Rows are independent,
    so the result does not depend on ``threads``.
    """
    n = round(1.0 / epsilon)
    if abs(n * epsilon - 1.0) > 1e-9:
        raise ValueError("epsilon must divide 1")
    row_ids = list(range(n + 1)) if rows is None else sorted(set(int(r) for r in rows))
    # large rows first for better load balance; results are re-sorted below
    jobs = [(i, n, schedule, target, spec, warm_start) for i in sorted(row_ids, reverse=True)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_certify_row, jobs, chunksize=1))
    else:
        results = [_certify_row(job) for job in jobs]
    results.sort(key=lambda r: r[0].x0)
    worst = None
    failed = cells = 0
    kept = [] if keep_cells else None
    for cell, f, c, row in results:
        failed += f
        cells += c
        if keep_cells:
            kept.extend(row)
        if worst is None or cell.margin < worst.margin:
            worst = cell
    return Certificate(1.0 / n, target, tuple(schedule), failed == 0, worst, cells, failed,
                       None if rows is None else row_ids, kept)


def default_threads() -> int:
    env = os.environ.get("PROPHET_KIT_THREADS")
    return int(env) if env else 1
