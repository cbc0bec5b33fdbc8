"""Per-edge guarantee curves for the two matching algorithms and their mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hfunc import h_eval
from ..ratio import exp_moments

BETA0 = 0.05
BETA1 = 0.75
MAM_WEIGHT = 0.8
HYBRID_TARGET = 0.641
ALPHA_ITERS = 60


def c_terms(h: float, beta0: float = BETA0, beta1: float = BETA1) -> tuple[float, float, float]:
    """Integrals of ``exp(-int A^u)`` over the three stages when ``A^u`` is ``h, 1, 2-h``."""
    c1 = beta0 if h == 0 else -math.expm1(-h * beta0) / h
    c2 = math.exp(-h * beta0) * -math.expm1(-(beta1 - beta0))
    c3 = math.exp(-h * beta0 - (beta1 - beta0)) * -math.expm1(-(2 - h) * (1 - beta1)) / (2 - h)
    return c1, c2, c3


def mam_f1(h: float) -> float:
    return sum(c_terms(h))


def mam_f2(h: float) -> float:
    _, c2, c3 = c_terms(h)
    return c2 + (2 - math.exp(-(BETA1 - BETA0))) * c3


def gamma_mam(x: float) -> float:
    if not 0 <= x <= 1:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    h = h_eval(2.0, x)
    return min(mam_f1(h), mam_f2(h))


def _car_gap(alpha: float, x: float) -> float:
    m = 1.0 - x
    i0_tail, i1_tail = exp_moments(m, 1.0 - alpha)
    i0_full, _ = exp_moments(m, 1.0)
    shift = math.exp(-m * alpha)
    lhs = shift * float(i0_tail)
    rhs = float(i0_full) - x * shift * float(i1_tail)
    return lhs - rhs


def car_alpha(x: float) -> float:
    """Root in ``[0, 1]`` of the activation-threshold equation, by bisection."""
    if not 0 <= x <= 1:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if _car_gap(0.0, x) <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(ALPHA_ITERS):
        mid = 0.5 * (lo + hi)
        if _car_gap(mid, x) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def car_residual(x: float) -> float:
    return abs(_car_gap(car_alpha(x), x))


def gamma_car(x: float) -> float:
    a = car_alpha(x)
    m = 1.0 - x
    if m == 0:
        return 1.0 - a
    return math.exp(-a * m) * float(exp_moments(m, 1.0 - a)[0])


def gamma_hybrid(x: float) -> float:
    return MAM_WEIGHT * gamma_mam(x) + (1 - MAM_WEIGHT) * gamma_car(x)


@dataclass(frozen=True)
class HybridCheck:
    passed: bool
    worst_x: float
    worst_value: float


def hybrid_bound_check(step: float = 1e-3, target: float = HYBRID_TARGET) -> HybridCheck:
    if not 0 < step <= 1e-3:
        raise ValueError("step must lie in (0, 1e-3]")
    n = int(round(1 / step))
    xs = np.linspace(0.0, 1.0, n + 1)
    vals = np.array([gamma_hybrid(float(x)) for x in xs])
    k = int(np.argmin(vals))
    return HybridCheck(bool(vals[k] >= target), float(xs[k]), float(vals[k]))


def curve_rows(step: float = 1e-3):
    """Rows ``(x, gamma_mam, gamma_car, hybrid)`` on a uniform grid."""
    n = int(round(1 / step))
    for k in range(n + 1):
        x = k / n
        gm, gc = gamma_mam(x), gamma_car(x)
        yield x, gm, gc, MAM_WEIGHT * gm + (1 - MAM_WEIGHT) * gc


def monotonicity_rows(step: float = 1e-3):
    """Rows ``(h, F1, F2)`` on a uniform grid over ``[0, 1]``."""
    n = int(round(1 / step))
    for k in range(n + 1):
        h = k / n
        yield h, mam_f1(h), mam_f2(h)
