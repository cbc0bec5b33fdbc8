"""Activation-based online policies for prophet secretary.

Every policy activates an arriving item ``i`` with value index ``k`` at time
``t`` with probability ``g(i, k, t)`` and accepts the first activated item.
Items are either *rate* items, where ``g = a(t) * exp(-int_0^t A_i)`` with
``A_i = sum_k p_k a_k``, or *prob* items whose table holds ``g`` directly.
Tables are piecewise constant on a shared set of breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .hfunc import h_eval
from .instance import DerivedStats, Instance

RATE = "rate"
PROB = "prob"
FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Policy:
    tag: str
    breakpoints: np.ndarray
    kinds: tuple[str, ...]
    tables: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        b = self.breakpoints
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must increase strictly from 0 to 1")
        object.__setattr__(self, "_cum", tuple(self._cumulative(i) for i in range(len(self.kinds))))
        for i in range(len(self.kinds)):
            tab = self.tables[i]
            if np.any(tab < -FEAS_TOL) or np.any(tab > 1 + FEAS_TOL):
                raise ValueError(f"{self.tag}: item {i} has entries outside [0, 1]")

    @property
    def n_items(self) -> int:
        return len(self.kinds)

    def rates(self, i: int) -> np.ndarray:
        """Total activation rate A_i per segment (rate items only)."""
        return self.probs[i] @ self.tables[i]

    def _cumulative(self, i: int) -> np.ndarray:
        if self.kinds[i] != RATE:
            return np.zeros(len(self.breakpoints))
        return np.concatenate([[0.0], np.cumsum(self.rates(i) * np.diff(self.breakpoints))])

    def segment(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1,
                       0, len(self.breakpoints) - 2)

    def cum_rate(self, i: int, t) -> np.ndarray:
        """int_0^t A_i for rate items."""
        seg = self.segment(t)
        rate = self.rates(i)[seg] if self.kinds[i] == RATE else 0.0
        return self._cum[i][seg] + rate * (np.asarray(t, dtype=float) - self.breakpoints[seg])

    def g(self, i: int, k, t) -> np.ndarray:
        """Activation probability; ``k`` and ``t`` broadcast together."""
        seg = self.segment(t)
        val = self.tables[i][k, seg]
        if self.kinds[i] == PROB:
            return val
        return val * np.exp(-self.cum_rate(i, t))


def _policy(tag: str, stats: DerivedStats, cuts: Sequence[float], kinds, tables) -> Policy:
    inst = stats.instance
    return Policy(tag, np.asarray(cuts, dtype=float), tuple(kinds),
                  tuple(np.asarray(t, dtype=float) for t in tables),
                  tuple(inst.probs(i) for i in range(inst.n_items)))


def _cuts(*betas: float) -> list[float]:
    return sorted({0.0, 1.0, *(b for b in betas if 0.0 < b < 1.0)})


def _segment_index(cuts: Sequence[float], at: float) -> int:
    """First segment starting at or after ``at``."""
    return int(np.searchsorted(np.asarray(cuts), at, side="left"))


def policy_constant(stats: DerivedStats) -> Policy:
    tables = [r[:, None] for r in stats.rho]
    return _policy("constant", stats, [0.0, 1.0], [RATE] * len(tables), tables)


def policy_step(stats: DerivedStats, beta: float = 0.367) -> Policy:
    """Rate (2 rho - 1)^+ before ``beta``, then 2 rho - (2 rho - 1)^+."""
    cuts = _cuts(beta)
    split = _segment_index(cuts, beta)
    tables = []
    for r in stats.rho:
        early = np.maximum(2 * r - 1, 0.0)
        tab = np.empty((len(r), len(cuts) - 1))
        tab[:, :split] = early[:, None]
        tab[:, split:] = (2 * r - early)[:, None]
        tables.append(tab)
    return _policy(f"step(beta={beta})", stats, cuts, [RATE] * len(tables), tables)


class InfeasibleZError(RuntimeError):
    """The z box cannot meet the required first-stage mass."""


@dataclass(frozen=True, eq=False)
class ZTable:
    z: tuple[np.ndarray, ...]
    h0: float
    h_ot: float
    s: float
    lam: float


def z_select(stats: DerivedStats, s: float = 2.0) -> ZTable:
    """First-stage rates: lower bound for the largest item, interpolated for the rest.

    For every other item ``z = low + lam * (rho - low)`` with
    ``low = (s rho - 1)^+ / (s - 1)`` and one scalar ``lam`` chosen so that
    ``sum p z`` over those items equals ``min(h_s(x0) - h0, 1 - x0)``.
    """
    if not s > 1:
        raise ValueError("s must exceed 1")
    inst = stats.instance
    i0 = stats.largest_item
    low = [np.maximum(s * r - 1.0, 0.0) / (s - 1.0) for r in stats.rho]
    h0 = float(inst.probs(i0) @ low[i0])
    h_ot = max(0.0, min(h_eval(s, stats.x0) - h0, 1.0 - stats.x0))
    others = [i for i in range(inst.n_items) if i != i0]
    lo_mass = sum(float(inst.probs(i) @ low[i]) for i in others)
    hi_mass = sum(float(inst.probs(i) @ stats.rho[i]) for i in others)
    if lo_mass > h_ot + FEAS_TOL or hi_mass < h_ot - FEAS_TOL:
        raise InfeasibleZError(f"no z meets mass {h_ot:.6g}: box spans [{lo_mass:.6g}, {hi_mass:.6g}]")
    span = hi_mass - lo_mass
    if h_ot >= hi_mass:
        lam = 1.0
    else:
        lam = 0.0 if span <= 0 else min(1.0, max(0.0, (h_ot - lo_mass) / span))
    z = []
    for i in range(inst.n_items):
        if i == i0:
            z.append(low[i])
        else:
            z.append(low[i] + lam * (stats.rho[i] - low[i]))
    return ZTable(tuple(z), h0, h_ot, s, lam)


def policy_main(stats: DerivedStats, s: float = 2.0, betas: Sequence[float] = (0.0, 0.367, 0.367),
                ztable: ZTable | None = None) -> Policy:
    """Step rates for all items except the largest, step probabilities for it."""
    b0, b1, b2 = (float(b) for b in betas)
    if not 0.0 <= b0 <= b1 <= b2 <= 1.0:
        raise ValueError("need 0 <= beta0 <= beta1 <= beta2 <= 1")
    zt = z_select(stats, s) if ztable is None else ztable
    cuts = _cuts(b0, b1, b2)
    starts = np.asarray(cuts[:-1])
    i0 = stats.largest_item
    kinds, tables = [], []
    for i, (r, z) in enumerate(zip(stats.rho, zt.z)):
        late = s * r - (s - 1.0) * z
        if i == i0:
            tab = np.where(starts[None, :] < b0, 0.0,
                           np.where(starts[None, :] < b2, z[:, None], late[:, None]))
            kinds.append(PROB)
        else:
            tab = np.where(starts[None, :] < b1, z[:, None], late[:, None])
            kinds.append(RATE)
        tables.append(tab)
    return _policy(f"main(s={s}, betas={b0:.6g},{b1:.6g},{b2:.6g})", stats, cuts, kinds, tables)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _draw(inst: Instance, policy: Policy, rng: np.random.Generator, size: int):
    """Arrival times, value indices and activation flags, each ``(size, n)``."""
    n = inst.n_items
    times = rng.random((size, n))
    vidx = np.empty((size, n), dtype=np.int64)
    for i in range(n):
        cdf = np.cumsum(inst.probs(i))
        vidx[:, i] = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(cdf) - 1)
    coins = rng.random((size, n))
    act = np.empty((size, n), dtype=bool)
    for i in range(n):
        act[:, i] = coins[:, i] < policy.g(i, vidx[:, i], times[:, i])
    return times, vidx, act


def simulate_batch(inst: Instance, policy: Policy, rng: np.random.Generator, size: int):
    """Run ``size`` independent trials.

    Returns ``(item, value_index, time)`` arrays; ``item == -1`` when nothing
    is accepted.
    """
    times, vidx, act = _draw(inst, policy, rng, size)
    masked = np.where(act, times, np.inf)
    first = np.argmin(masked, axis=1)
    rows = np.arange(size)
    hit = np.isfinite(masked[rows, first])
    item = np.where(hit, first, -1)
    return item, np.where(hit, vidx[rows, first], -1), np.where(hit, times[rows, first], np.nan)


def simulate_once(inst: Instance, policy: Policy, rng: np.random.Generator):
    """One trial: ``(item, value_index, time)`` of the accepted item, or None."""
    item, k, t = simulate_batch(inst, policy, rng, 1)
    if item[0] < 0:
        return None
    return int(item[0]), int(k[0]), float(t[0])


def activation_before(inst: Instance, policy: Policy, rng: np.random.Generator, size: int,
                      thetas: Sequence[float]) -> np.ndarray:
    """Empirical Pr[item i activated before theta], shape ``(len(thetas), n)``."""
    times, _, act = _draw(inst, policy, rng, size)
    return np.array([(act & (times < th)).mean(axis=0) for th in thetas])


# ---------------------------------------------------------------------------
# exact acceptance probabilities by quadrature
# ---------------------------------------------------------------------------


class QuadratureError(RuntimeError):
    pass


def _accept_on_grid(inst: Instance, policy: Policy, per_piece: int):
    n = inst.n_items
    b = policy.breakpoints
    grids = [np.linspace(lo, hi, per_piece + 1) for lo, hi in zip(b[:-1], b[1:])]
    # mean activation E_k[g] per item, then its running integral across pieces
    out = [np.zeros(len(inst.probs(i))) for i in range(n)]
    carry = np.zeros(n)
    for grid in grids:
        mid = 0.5 * (grid[0] + grid[-1])
        seg_fix = np.full_like(grid, mid)  # keeps endpoints on this piece
        mean_g = np.empty((n, len(grid)))
        g_vals = []
        for i in range(n):
            ks = np.arange(len(inst.probs(i)))[:, None]
            gv = _g_on_piece(policy, i, ks, grid, seg_fix)
            g_vals.append(gv)
            mean_g[i] = inst.probs(i) @ gv
        cum = carry[:, None] + cumulative_simpson(mean_g, x=grid, axis=1, initial=0.0)
        survive = 1.0 - cum
        # products over j != i via prefix and suffix products
        prefix = np.cumprod(np.vstack([np.ones(len(grid)), survive[:-1]]), axis=0)
        suffix = np.cumprod(np.vstack([survive[1:], np.ones(len(grid))])[::-1], axis=0)[::-1]
        others = prefix * suffix
        for i in range(n):
            integrand = inst.probs(i)[:, None] * g_vals[i] * others[i][None, :]
            out[i] += simpson(integrand, x=grid, axis=1)
        carry = cum[:, -1]
    return out


def _g_on_piece(policy: Policy, i: int, ks, grid: np.ndarray, seg_fix: np.ndarray) -> np.ndarray:
    # evaluate g with the segment pinned by the piece midpoint so that the
    # right endpoint uses the left-limit value of this piece
    seg = policy.segment(seg_fix)
    val = policy.tables[i][ks, seg]
    if policy.kinds[i] == PROB:
        return np.broadcast_to(val, (ks.shape[0], len(grid))).astype(float)
    rate = policy.rates(i)[seg]
    cum = policy._cum[i][seg] + rate * (grid - policy.breakpoints[seg])
    return val * np.exp(-cum)


def exact_accept_probs(inst: Instance, policy: Policy, start: int = 2**14, tol: float = 1e-9,
                       max_refinements: int = 20) -> list[np.ndarray]:
    """Pr[accept item i with value index k] from the framework integral.

    Composite Simpson on every smooth piece of the policy, doubling the
    number of nodes until two successive passes agree to ``tol``.
    """
    per_piece = max(2, start // max(1, len(policy.breakpoints) - 1))
    per_piece += per_piece % 2
    prev = _accept_on_grid(inst, policy, per_piece)
    for _ in range(max_refinements):
        per_piece *= 2
        cur = _accept_on_grid(inst, policy, per_piece)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(cur, prev))
        if diff <= tol:
            return cur
        prev = cur
    raise QuadratureError(f"no convergence after {max_refinements} refinements (last diff {diff:.3g})")
