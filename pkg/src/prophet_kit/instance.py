"""Prophet-secretary instances: discrete value distributions per item.

Ties between equal values are broken by item index (lower index wins), which
makes the maximum unique on every outcome.  Everything derived here (``rho``,
``x``, the prophet value) is computed under that total order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class InstanceError(ValueError):
    """Raised for malformed or inconsistent instance data."""


@dataclass(frozen=True)
class ValueAtom:
    value: float
    prob: float


@dataclass(frozen=True)
class Instance:
    """Ordered list of items; each item is a tuple of atoms sorted by value."""

    items: tuple[tuple[ValueAtom, ...], ...]

    def __post_init__(self):
        if not self.items:
            raise InstanceError("instance has no items")
        for i, atoms in enumerate(self.items):
            _validate_item(i, atoms)

    @classmethod
    def from_lists(cls, items: Sequence[Sequence[tuple[float, float]]]) -> "Instance":
        """Build from ``[[(value, prob), ...], ...]``; atoms are sorted by value."""
        built = []
        for i, atoms in enumerate(items):
            atoms = [ValueAtom(float(v), float(p)) for v, p in atoms]
            if not atoms:
                raise InstanceError(f"item {i}: no atoms")
            built.append(tuple(sorted(atoms, key=lambda a: a.value)))
        return cls(tuple(built))

    @property
    def n_items(self) -> int:
        return len(self.items)

    def values(self, i: int) -> np.ndarray:
        return np.array([a.value for a in self.items[i]])

    def probs(self, i: int) -> np.ndarray:
        return np.array([a.prob for a in self.items[i]])

    def to_dict(self) -> dict:
        return {"items": [[{"v": a.value, "p": a.prob} for a in atoms] for atoms in self.items]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _validate_item(i: int, atoms: Sequence[ValueAtom]) -> None:
    if not atoms:
        raise InstanceError(f"item {i}: no atoms")
    total = 0.0
    prev = None
    for a in atoms:
        if not (np.isfinite(a.value) and a.value >= 0):
            raise InstanceError(f"item {i}: negative or non-finite value {a.value}")
        if not (a.prob > 0 and a.prob <= 1):
            raise InstanceError(f"item {i}: probability {a.prob} outside (0, 1]")
        if prev is not None and a.value <= prev:
            raise InstanceError(f"item {i}: values must be distinct and ascending")
        prev = a.value
        total += a.prob
    if abs(total - 1.0) > PROB_TOL:
        raise InstanceError(f"item {i}: probabilities sum to {total:.12g}")


def parse_instance(text: str) -> Instance:
    """Parse the JSON instance format ``{"items": [[{"v": .., "p": ..}, ...], ...]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("items"), list):
        raise InstanceError('expected an object with an "items" list')
    items = []
    for i, raw in enumerate(doc["items"]):
        if not isinstance(raw, list):
            raise InstanceError(f"item {i}: expected a list of atoms")
        atoms = []
        for atom in raw:
            if not isinstance(atom, dict) or set(atom) != {"v", "p"}:
                raise InstanceError(f'item {i}: each atom needs exactly the keys "v" and "p"')
            try:
                atoms.append((float(atom["v"]), float(atom["p"])))
            except (TypeError, ValueError) as exc:
                raise InstanceError(f"item {i}: non-numeric atom {atom!r}") from exc
        items.append(atoms)
    return Instance.from_lists(items)


def load_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


@dataclass(frozen=True)
class DerivedStats:
    """Per-(item, value index) tables ``rho`` and ``x`` plus summary numbers.

    ``rho[i][k]`` is the probability that every other item draws something
    ranked below item i's k-th value; ``x[i][k] = p * rho``.
    """

    instance: Instance
    rho: tuple[np.ndarray, ...]
    x: tuple[np.ndarray, ...]
    prophet: float
    largest_item: int
    x0: float

    def item_mass(self, i: int) -> float:
        return float(self.x[i].sum())


def _below_prob(inst: Instance, j: int, v: float, i: int) -> float:
    """Pr[(v_j, j) ranks strictly below (v, i)] under the value-then-index order."""
    vals = inst.values(j)
    probs = inst.probs(j)
    below = probs[vals < v].sum()
    if j > i:
        below += probs[vals == v].sum()
    return min(float(below), 1.0)


def derived_stats(inst: Instance) -> DerivedStats:
    n = inst.n_items
    rho, x = [], []
    for i in range(n):
        vals = inst.values(i)
        r = np.ones(len(vals))
        for k, v in enumerate(vals):
            for j in range(n):
                if j != i:
                    r[k] *= _below_prob(inst, j, v, i)
        rho.append(r)
        x.append(inst.probs(i) * r)
    prophet = float(sum((inst.values(i) * x[i]).sum() for i in range(n)))
    masses = np.array([xi.sum() for xi in x])
    i0 = int(np.argmax(masses))  # first index on ties
    return DerivedStats(inst, tuple(rho), tuple(x), prophet, i0, float(masses[i0]))


def gen_hard_instance(n: int, p: float) -> Instance:
    """One rare large item (value 1/p w.p. p) followed by ``n`` i.i.d. small items."""
    if n < 1:
        raise InstanceError("need at least one small item")
    if not 0 < p <= 1:
        raise InstanceError("p must lie in (0, 1]")
    big = [(1.0 / p, p)] if p == 1 else [(0.0, 1 - p), (1.0 / p, p)]
    small = [(1.0, 1.0)] if n == 1 else [(0.0, 1 - 1 / n), (1.0, 1 / n)]
    return Instance.from_lists([big] + [small] * n)


def random_instance(rng: np.random.Generator, n_items: int, max_atoms: int = 4,
                    value_scale: float = 10.0) -> Instance:
    """Random instance with integer-ish values so cross-item ties do occur."""
    items = []
    for _ in range(n_items):
        m = int(rng.integers(1, max_atoms + 1))
        vals = np.sort(rng.choice(np.arange(int(value_scale) + 1), size=m, replace=False))
        w = rng.uniform(0.05, 1.0, size=m)
        w /= w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        items.append(list(zip(vals.astype(float), w)))
    return Instance.from_lists(items)
