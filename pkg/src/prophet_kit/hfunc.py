"""The bound function h_s(x) on the total excess mass sum (s*x_i^v - p_i^v)^+ / (s-1).

``h_s(x)`` is the maximum over ``t`` in ``[0, x)`` of :func:`h_inner`.  In ``t``
the inner expression is piecewise smooth: summand ``k`` is active while
``1 - t - k*x > 1/s``, and on every piece with a fixed active set each summand
is concave, so a ternary search per piece locates the maximum.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

DEFAULT_TOL = 1e-9


def h_limit(s: float) -> float:
    """Right limit of h_s at 0, used as the value at x = 0."""
    return 1.0 - math.log(s) / (s - 1.0)


def _check(s: float, x: float) -> None:
    if not s > 1:
        raise ValueError(f"s must exceed 1, got {s}")
    if not 0 <= x <= 1:
        raise ValueError(f"x must lie in [0, 1], got {x}")


def _active_terms(s: float, x: float, t: float) -> int:
    """Number of k >= 0 with 1 - t - k*x > 1/s."""
    room = 1.0 - t - 1.0 / s
    if room <= 0:
        return 0
    n = int(math.floor(room / x)) + 1
    # floor can be off by one when room/x is an integer
    while n > 0 and 1.0 - t - (n - 1) * x <= 1.0 / s:
        n -= 1
    while 1.0 - t - n * x > 1.0 / s:
        n += 1
    return n


def _piece(s: float, x: float, t: float, n: int) -> float:
    if n == 0:
        return t
    d = 1.0 - t - x * np.arange(n)
    return t + float(np.sum(s * x - x / d)) / (s - 1.0)


def h_inner(s: float, x: float, t: float) -> float:
    """t + 1/(s-1) * sum_k (s*x - x/(1 - t - k*x))^+ for 0 <= t < x."""
    _check(s, x)
    if x == 0 or not 0 <= t < x:
        raise ValueError(f"need 0 <= t < x, got t={t}, x={x}")
    return _piece(s, x, t, _active_terms(s, x, t))


def segments(s: float, x: float) -> list[tuple[float, float, int]]:
    """Pieces ``(lo, hi, n_active)`` covering ``[0, x]`` for :func:`h_inner`."""
    cuts = [1.0 - k * x - 1.0 / s for k in range(int(1.0 / x) + 2)]
    cuts = sorted(c for c in cuts if 0 < c < x)
    edges = [0.0] + cuts + [x]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            out.append((lo, hi, _active_terms(s, x, 0.5 * (lo + hi))))
    return out


def _ternary_max(f, lo: float, hi: float, tol: float) -> float:
    # golden-section flavour of ternary search on a concave function
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return max(fc, fd, f(lo), f(hi))


@lru_cache(maxsize=65536)
def h_eval(s: float, x: float, tol: float = DEFAULT_TOL) -> float:
    """Evaluate h_s(x) to absolute accuracy ``tol``.

    The supremum over the half-open ``[0, x)`` is taken as a maximum over
    ``[0, x]``; the inner expression is continuous, so the two agree.
    """
    _check(s, x)
    if x == 0:
        return h_limit(s)
    best = -math.inf
    for lo, hi, n in segments(s, x):
        if n == 0:
            # no active summand: the expression is t itself
            best = max(best, hi)
            continue
        best = max(best, _ternary_max(lambda t, n=n: _piece(s, x, t, n), lo, hi, tol))
    return best


def h_lipschitz_check(s: float, x_low: float, x_high: float, tol: float = DEFAULT_TOL) -> bool:
    """Left-Lipschitz bound h(x_high) - h(x_low) <= (s+1)/2 * (x_high - x_low)."""
    if not 0 <= x_low <= x_high <= 1:
        raise ValueError("need 0 <= x_low <= x_high <= 1")
    gap = h_eval(s, x_high, tol) - h_eval(s, x_low, tol)
    return gap <= 0.5 * (s + 1.0) * (x_high - x_low) + 2 * tol
