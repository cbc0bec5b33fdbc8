"""Correlated interval sampling: redirection weights between offline vertices."""

from __future__ import annotations

import numpy as np

SUM_TOL = 1e-12


def _overlap(a0, a1, b0, b1):
    return np.maximum(0.0, np.minimum(a1, b1) - np.maximum(a0, b0))


def overlap_mu(rho) -> np.ndarray:
    """Symmetric matrix ``mu[u, u']`` for one (online vertex, type) row.

    Intervals of length ``rho[u]`` are laid left to right on ``[0, 1]``.  A
    point ``eta`` is paired with ``eta +/- 1/2``; ``mu[u, u']`` is the measure
    of points in ``I_u`` whose partner falls in ``I_u'``.  Computed exactly
    from interval overlaps: the partner of ``[0, 1/2)`` is ``[1/2, 1)``.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or np.any(rho < 0) or rho.sum() > 1 + SUM_TOL:
        raise ValueError("rho must be a non-negative vector summing to at most 1")
    right = np.cumsum(rho)
    left = right - rho
    # portion of each interval in the lower half, shifted up by 1/2
    lo_a, lo_b = np.minimum(left, 0.5) + 0.5, np.minimum(right, 0.5) + 0.5
    mu = _overlap(lo_a[:, None], lo_b[:, None], left[None, :], right[None, :])
    mu = mu + mu.T
    np.fill_diagonal(mu, 0.0)
    return mu
