"""Type graphs, LP solutions, feasibility checks, 1-regular padding, offline optimum."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

LP_TOL = 1e-9
MAX_CHECK_TYPES = 16
MAX_PROFILES = 10**6
DUMMY_TYPE = "__dummy__"


class MatchingInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TypeGraph:
    """Offline vertices ``0..n_offline-1``, online vertices with type distributions.

    ``probs[i, t]`` is Pr[online vertex i has type ``types[t]``] and
    ``weights[u, t]`` the weight of edge (u, type t).
    """

    n_offline: int
    types: tuple
    probs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 2 or self.probs.shape[1] != len(self.types):
            raise MatchingInputError("probs must have shape (online, types)")
        if self.weights.shape != (self.n_offline, len(self.types)):
            raise MatchingInputError("weights must have shape (offline, types)")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1) > 1e-12):
            raise MatchingInputError("each online vertex needs a probability distribution over types")
        if np.any(self.weights < 0):
            raise MatchingInputError("weights must be non-negative")

    @property
    def n_online(self) -> int:
        return self.probs.shape[0]

    @property
    def n_types(self) -> int:
        return len(self.types)


@dataclass(frozen=True, eq=False)
class MatchingInstance:
    graph: TypeGraph
    x: np.ndarray  # (online, offline, types)
    n_original_online: int = -1
    n_original_offline: int = -1

    def __post_init__(self):
        g = self.graph
        if self.x.shape != (g.n_online, g.n_offline, g.n_types):
            raise MatchingInputError("x must have shape (online, offline, types)")
        if self.n_original_online < 0:
            object.__setattr__(self, "n_original_online", g.n_online)
        if self.n_original_offline < 0:
            object.__setattr__(self, "n_original_offline", g.n_offline)

    def lp_value(self) -> float:
        return float(np.einsum("iut,ut->", self.x, self.graph.weights))


def lp_derived(graph: TypeGraph, x: np.ndarray) -> dict:
    """``rho = x/p``, ``x_i^u``, ``x^u`` and ``h_u`` from an LP solution."""
    p = graph.probs[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(p > 0, x / np.where(p > 0, p, 1.0), 0.0)
    x_iu = x.sum(axis=2)
    h_u = np.maximum(2 * x - p, 0.0).sum(axis=(0, 2))
    return {"rho": rho, "x_iu": x_iu, "x_u": x_iu.max(axis=0), "h_u": h_u}


# ---------------------------------------------------------------------------
# LP feasibility
# ---------------------------------------------------------------------------


@dataclass
class LPCheck:
    ok: bool
    kind: str = ""
    where: tuple = ()
    lhs: float = 0.0
    rhs: float = 0.0

    def __bool__(self):
        return self.ok


def check_lp(graph: TypeGraph, x: np.ndarray, tol: float = LP_TOL) -> LPCheck:
    """Validate every LP constraint; reports the first violation found.

    The per-offline-vertex constraints range over all type subsets, so the
    number of types is capped at 16.
    """
    if graph.n_types > MAX_CHECK_TYPES:
        raise MatchingInputError(f"check_lp enumerates type subsets; at most {MAX_CHECK_TYPES} types")
    if np.any(x < -tol):
        i, u, t = np.argwhere(x < -tol)[0]
        return LPCheck(False, "nonnegative", (int(i), int(u), graph.types[t]), float(x[i, u, t]), 0.0)
    per_type = x.sum(axis=1)  # (online, types)
    bad = per_type > graph.probs + tol
    if np.any(bad):
        i, t = np.argwhere(bad)[0]
        return LPCheck(False, "type", (int(i), graph.types[t]), float(per_type[i, t]), float(graph.probs[i, t]))
    T = graph.n_types
    masks = ((np.arange(1, 2**T)[:, None] >> np.arange(T)[None, :]) & 1).astype(float)  # (S, T)
    p_S = graph.probs @ masks.T  # (online, S)
    rhs = 1.0 - np.prod(1.0 - np.minimum(p_S, 1.0), axis=0)
    lhs = np.einsum("iut,st->us", x, masks)
    viol = lhs > rhs[None, :] + tol
    if np.any(viol):
        u, s = np.argwhere(viol)[0]
        subset = tuple(graph.types[t] for t in range(T) if masks[s, t])
        return LPCheck(False, "subset", (int(u), subset), float(lhs[u, s]), float(rhs[s]))
    return LPCheck(True)


def is_regular(x: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(x.sum(axis=(1, 2)) - 1) <= tol) and np.all(np.abs(x.sum(axis=(0, 2)) - 1) <= tol))


def normalize_regular(graph: TypeGraph, x: np.ndarray, tol: float = 1e-12) -> MatchingInstance:
    """Pad an LP solution with zero-weight dummies until all row/column sums are 1.

    1. Online vertex ``i`` with slack routes the unused mass
       ``p_i^v - sum_u x_i^{(u,v)}`` of each type onto its own dummy offline
       vertex; a single online vertex never violates that vertex's constraints.
    2. The remaining offline deficits add up to an integer ``m``; ``m`` dummy
       online vertices with one shared dummy type (probability 1) fill them
       in order.  Any type subset containing the dummy type has right-hand
       side 1, and no other subset sees dummy mass.

    Original vertices keep their indices; dummies are appended.
    """
    n, U, T = x.shape
    slack = np.maximum(graph.probs - x.sum(axis=1), 0.0)
    slack[slack <= tol] = 0.0
    needy = [i for i in range(n) if slack[i].sum() > tol]
    U1 = U + len(needy)
    col = np.zeros(U1)
    col[:U] = x.sum(axis=(0, 2))
    for k, i in enumerate(needy):
        col[U + k] = slack[i].sum()
    deficit = np.maximum(1.0 - col, 0.0)
    deficit[deficit <= tol] = 0.0
    m = int(round(deficit.sum()))
    if abs(deficit.sum() - m) > 1e-6:
        raise MatchingInputError(f"column deficits sum to {deficit.sum():.9g}, expected an integer")
    if not needy and m == 0:
        return MatchingInstance(graph, x.copy())
    types = tuple(graph.types) + ((DUMMY_TYPE,) if m else ())
    T1 = len(types)
    N1 = n + m
    x1 = np.zeros((N1, U1, T1))
    x1[:n, :U, :T] = x
    for k, i in enumerate(needy):
        x1[i, U + k, :T] = slack[i]
    probs = np.zeros((N1, T1))
    probs[:n, :T] = graph.probs
    if m:
        probs[n:, T] = 1.0
        # fill deficits in offline order, one unit of mass per dummy online vertex
        j, room = n, 1.0
        for u in range(U1):
            need = deficit[u]
            while need > tol and j < N1:
                take = min(need, room)
                x1[j, u, T] += take
                need -= take
                room -= take
                if room <= tol:
                    j, room = j + 1, 1.0
        # absorb rounding so every dummy row sums to exactly one
        for j in range(n, N1):
            row = x1[j, :, T]
            if row.sum() > 0:
                row *= 1.0 / row.sum()
    weights = np.zeros((U1, T1))
    weights[:U, :T] = graph.weights
    g1 = TypeGraph(U1, types, probs, weights)
    return MatchingInstance(g1, x1, n, U)


# ---------------------------------------------------------------------------
# offline benchmark
# ---------------------------------------------------------------------------


def _profiles(graph: TypeGraph):
    supports = [np.flatnonzero(graph.probs[i] > 0) for i in range(graph.n_online)]
    total = int(np.prod([len(s) for s in supports], dtype=float))
    if total > MAX_PROFILES:
        raise MatchingInputError(f"{total} type profiles exceed the cap of {MAX_PROFILES}")
    for prof in itertools.product(*supports):
        prob = float(np.prod([graph.probs[i, t] for i, t in enumerate(prof)]))
        yield prof, prob


def _best_matching(graph: TypeGraph, prof) -> tuple[float, list[tuple[int, int]]]:
    w = graph.weights[:, list(prof)].T  # (online, offline)
    rows, cols = linear_sum_assignment(w, maximize=True)
    pairs = [(int(i), int(u)) for i, u in zip(rows, cols) if w[i, u] > 0]
    return float(sum(w[i, u] for i, u in pairs)), pairs


def brute_force_offline(graph: TypeGraph) -> float:
    """Expected maximum-weight matching over all type profiles."""
    return sum(prob * _best_matching(graph, prof)[0] for prof, prob in _profiles(graph))


def brute_force_marginals(graph: TypeGraph) -> np.ndarray:
    """Pr[i matched to u and i has type t] under the offline optimum (fixed tie-breaking)."""
    x = np.zeros((graph.n_online, graph.n_offline, graph.n_types))
    for prof, prob in _profiles(graph):
        for i, u in _best_matching(graph, prof)[1]:
            x[i, u, prof[i]] += prob
    return x


def random_graph(rng: np.random.Generator, n_online: int, n_offline: int, n_types: int,
                 iid: bool = False) -> TypeGraph:
    probs = rng.dirichlet(np.ones(n_types), size=1 if iid else n_online)
    if iid:
        probs = np.repeat(probs, n_online, axis=0)
    weights = np.round(rng.uniform(0, 10, size=(n_offline, n_types)), 2)
    return TypeGraph(n_offline, tuple(range(n_types)), probs, weights)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def parse_matching(text: str) -> MatchingInstance:
    """Parse ``{"offline": K, "online": [...], "weights": {"u,v": w}, "x": [...]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MatchingInputError(f"invalid JSON: {exc}") from exc
    try:
        K = int(doc["offline"])
        online = doc["online"]
        type_ids: list = []
        for vert in online:
            for atom in vert["types"]:
                if atom["v"] not in type_ids:
                    type_ids.append(atom["v"])
        pos = {v: k for k, v in enumerate(type_ids)}
        probs = np.zeros((len(online), len(type_ids)))
        for i, vert in enumerate(online):
            for atom in vert["types"]:
                probs[i, pos[atom["v"]]] += float(atom["p"])
        weights = np.zeros((K, len(type_ids)))
        for key, w in doc.get("weights", {}).items():
            u_s, v_s = key.split(",", 1)
            v = _match_type(v_s, pos)
            weights[int(u_s), pos[v]] = float(w)
        x = np.zeros((len(online), K, len(type_ids)))
        for ent in doc.get("x", []):
            x[int(ent["i"]), int(ent["u"]), pos[_match_type(ent["v"], pos)]] = float(ent["val"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MatchingInputError(f"malformed matching instance: {exc}") from exc
    return MatchingInstance(TypeGraph(K, tuple(type_ids), probs, weights), x)


def _match_type(raw, pos: dict):
    if raw in pos:
        return raw
    for v in pos:
        if str(v) == str(raw):
            return v
    raise MatchingInputError(f"unknown type {raw!r}")


def dump_matching(inst: MatchingInstance) -> str:
    g = inst.graph
    doc = {
        "offline": g.n_offline,
        "online": [{"types": [{"v": g.types[t], "p": float(g.probs[i, t])}
                              for t in range(g.n_types) if g.probs[i, t] > 0]}
                   for i in range(g.n_online)],
        "weights": {f"{u},{g.types[t]}": float(g.weights[u, t])
                    for u in range(g.n_offline) for t in range(g.n_types) if g.weights[u, t] != 0},
        "x": [{"i": int(i), "u": int(u), "v": g.types[t], "val": float(inst.x[i, u, t])}
              for i, u, t in zip(*np.nonzero(inst.x))],
    }
    return json.dumps(doc)
