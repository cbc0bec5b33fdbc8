"""Online matching runners, vectorized over a batch of independent runs.

Each batch call returns, for every run and online vertex, the realized type
and the offline partner (``-1`` if unmatched).  A single run is a batch of
size one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import BETA0, BETA1, MAM_WEIGHT, car_alpha
from .overlap import overlap_mu
from .model import MatchingInstance, is_regular

G_TOL = 1e-12


class NotRegularError(ValueError):
    pass


@dataclass(frozen=True)
class BatchOutcome:
    types: np.ndarray  # (runs, online)
    partner: np.ndarray  # (runs, online), -1 for unmatched

    def weight(self, inst: MatchingInstance) -> np.ndarray:
        w = inst.graph.weights
        matched = self.partner >= 0
        vals = w[np.where(matched, self.partner, 0), self.types]
        return np.where(matched, vals, 0.0).sum(axis=1)

    def edges(self, run: int = 0) -> list[tuple[int, int, int]]:
        return [(i, int(u), int(self.types[run, i])) for i, u in enumerate(self.partner[run]) if u >= 0]


@dataclass
class _Tables:
    probs: np.ndarray  # (n, T)
    rho: np.ndarray  # (n, U, T)
    x_iu: np.ndarray  # (n, U)
    r1: np.ndarray  # (n, U, T) first-stage rates
    e1: np.ndarray  # (n, U)
    e3: np.ndarray  # (n, U)
    mu: np.ndarray = field(default=None)  # (n, T, U, U)


def _tables(inst: MatchingInstance, with_mu: bool) -> _Tables:
    if not is_regular(inst.x):
        raise NotRegularError("runners need a 1-regular solution; call normalize_regular first")
    g = inst.graph
    p = g.probs
    pe = p[:, None, :]
    rho = np.divide(inst.x, pe, out=np.zeros_like(inst.x), where=pe > 0)
    r1 = np.maximum(2 * rho - 1, 0.0)
    tab = _Tables(
        probs=p,
        rho=rho,
        x_iu=inst.x.sum(axis=2),
        r1=r1,
        e1=(pe * r1).sum(axis=2),
        e3=(pe * (2 * rho - r1)).sum(axis=2),
    )
    if with_mu:
        n, U, T = rho.shape
        mu = np.zeros((n, T, U, U))
        for i in range(n):
            for t in range(T):
                if p[i, t] > 0:
                    mu[i, t] = overlap_mu(rho[i, :, t])
        tab.mu = mu
    return tab


def _draw(probs: np.ndarray, rng: np.random.Generator, size: int):
    n = probs.shape[0]
    times = rng.random((size, n))
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = np.inf
    u = rng.random((size, n))
    types = np.empty((size, n), dtype=np.int64)
    for i in range(n):
        types[:, i] = np.searchsorted(cdf[i], u[:, i], side="right")
    picks = rng.random((size, n))
    return times, types, picks


def _choose(g: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Inverse-CDF pick over the offline order; ``-1`` when ``r`` falls past the total."""
    cum = np.cumsum(g, axis=1)
    u = (r[:, None] >= cum).sum(axis=1)
    return np.where(u < g.shape[1], u, -1)


def _mam_exponent(tab: _Tables, i: np.ndarray, t: np.ndarray, beta0: float, beta1: float) -> np.ndarray:
    t = t[:, None]
    return (tab.e1[i] * np.minimum(t, beta0)
            + tab.x_iu[i] * np.clip(t - beta0, 0.0, beta1 - beta0)
            + tab.e3[i] * np.maximum(t - beta1, 0.0))


def mam_batch(inst: MatchingInstance, rng: np.random.Generator, size: int,
              beta0: float = BETA0, beta1: float = BETA1) -> BatchOutcome:
    tab = _tables(inst, with_mu=True)
    n, U, _ = tab.rho.shape
    times, types, picks = _draw(tab.probs, rng, size)
    order = np.argsort(times, axis=1)
    rows = np.arange(size)
    matched = np.zeros((size, U), dtype=bool)
    matched_b1 = np.zeros((size, U), dtype=bool)
    partner = np.full((size, n), -1, dtype=np.int64)
    # exp(-int_0^{beta1} A_i^u) per (i, u)
    d_b1 = np.exp(-(beta0 * tab.e1 + (beta1 - beta0) * tab.x_iu))
    for k in range(n):
        i = order[:, k]
        t = times[rows, i]
        v = types[rows, i]
        rho = tab.rho[i, :, v]
        a = np.where((t < beta0)[:, None], tab.r1[i, :, v], rho)
        late = t >= beta1
        if np.any(late):
            mu = tab.mu[i[late], v[late]]  # (b, U, U), symmetric
            d = d_b1[i[late]]
            m = matched_b1[late]
            redirect = np.einsum("bw,bwu->bu", 1 - d + m * d, mu)
            a[late] = np.where(m, 0.0, rho[late] + redirect)
        g = a * np.exp(-_mam_exponent(tab, i, t, beta0, beta1))
        total = g.sum(axis=1)
        if np.any(total > 1 + G_TOL):
            raise AssertionError(f"proposal probabilities sum to {total.max():.15g} > 1")
        u = _choose(g, picks[rows, i])
        take = u >= 0
        take[take] &= ~matched[rows[take], u[take]]
        matched[rows[take], u[take]] = True
        early = take & ~late
        matched_b1[rows[early], u[early]] = True
        partner[rows[take], i[take]] = u[take]
    return BatchOutcome(types, partner)


def car_batch(inst: MatchingInstance, rng: np.random.Generator, size: int) -> BatchOutcome:
    tab = _tables(inst, with_mu=False)
    n, U, _ = tab.rho.shape
    x_u = tab.x_iu.max(axis=0)
    i_u = tab.x_iu.argmax(axis=0)  # first maximal index
    alpha = np.array([car_alpha(float(min(max(xu, 0.0), 1.0))) for xu in x_u])
    times, types, picks = _draw(tab.probs, rng, size)
    coins = rng.random((size, n))
    order = np.argsort(times, axis=1)
    rows = np.arange(size)
    matched = np.zeros((size, U), dtype=bool)
    partner = np.full((size, n), -1, dtype=np.int64)
    for k in range(n):
        i = order[:, k]
        t = times[rows, i]
        v = types[rows, i]
        u = _choose(tab.rho[i, :, v], picks[rows, i])
        prop = u >= 0
        uu = np.where(prop, u, 0)
        is_big = i_u[uu] == i
        active = np.where(is_big, t >= alpha[uu], coins[rows, i] < np.exp(-t * tab.x_iu[i, uu]))
        take = prop & active & ~matched[rows, uu]
        matched[rows[take], uu[take]] = True
        partner[rows[take], i[take]] = uu[take]
    return BatchOutcome(types, partner)


def hybrid_batch(inst: MatchingInstance, rng: np.random.Generator, size: int,
                 mam_weight: float = MAM_WEIGHT) -> BatchOutcome:
    heads = rng.random(size) < mam_weight
    n = inst.graph.n_online
    types = np.empty((size, n), dtype=np.int64)
    partner = np.empty((size, n), dtype=np.int64)
    for mask, runner in ((heads, mam_batch), (~heads, car_batch)):
        k = int(mask.sum())
        if k:
            out = runner(inst, rng, k)
            types[mask], partner[mask] = out.types, out.partner
    return BatchOutcome(types, partner)


def mam_run(inst: MatchingInstance, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """One run; returns matched edges as ``(online, offline, type index)``."""
    return mam_batch(inst, rng, 1).edges()


def car_run(inst: MatchingInstance, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    return car_batch(inst, rng, 1).edges()


def hybrid_run(inst: MatchingInstance, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    return hybrid_batch(inst, rng, 1).edges()


def stage_rate_sums(inst: MatchingInstance, beta0: float = BETA0, beta1: float = BETA1) -> np.ndarray:
    """``sum_i A_i^u`` on each of the three stages, shape ``(3, U)``."""
    tab = _tables(inst, with_mu=False)
    return np.stack([tab.e1.sum(axis=0), tab.x_iu.sum(axis=0), tab.e3.sum(axis=0)])


def edge_bounds(inst: MatchingInstance, gamma) -> np.ndarray:
    """``gamma(x^u) * x_i^{(u,v)}`` per edge."""
    x_u = inst.x.sum(axis=2).max(axis=0)
    g = np.array([gamma(float(min(xu, 1.0))) for xu in x_u])
    return inst.x * g[None, :, None]
