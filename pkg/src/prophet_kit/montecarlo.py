"""Seeded Monte Carlo estimation of acceptance frequencies and bound checks."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .instance import Instance
from .matching.algorithms import BatchOutcome
from .matching.model import MatchingInstance
from .policies import Policy, simulate_batch

BLOCK = 8192
SE_THRESHOLD = 4.0


@dataclass(frozen=True)
class Runner:
    """Batch simulator with labelled counters.

    ``run(rng, size)`` returns per-key success counts and the summed value
    collected over ``size`` independent trials.
    """

    keys: tuple[str, ...]
    run: Callable[[np.random.Generator, int], tuple[np.ndarray, float]]


def policy_runner(inst: Instance, policy: Policy) -> Runner:
    """Counts acceptances per (item, value) pair."""
    offsets = np.cumsum([0] + [len(inst.items[i]) for i in range(inst.n_items)])
    keys = tuple(f"{i}:{a.value:g}" for i in range(inst.n_items) for a in inst.items[i])
    vals = np.array([a.value for i in range(inst.n_items) for a in inst.items[i]])

    def run(rng, size):
        item, k, _ = simulate_batch(inst, policy, rng, size)
        hit = item >= 0
        flat = offsets[item[hit]] + k[hit]
        counts = np.bincount(flat, minlength=len(keys))
        return counts, float(vals[flat].sum())

    return Runner(keys, run)


def matching_runner(inst: MatchingInstance,
                    batch: Callable[[MatchingInstance, np.random.Generator, int], BatchOutcome]) -> Runner:
    """Counts matches per (online, offline, type) edge of the original graph."""
    g = inst.graph
    n, U, T = inst.n_original_online, inst.n_original_offline, g.n_types
    keys = tuple(f"{i},{u},{g.types[t]}" for i in range(n) for u in range(U) for t in range(T))

    def run(rng, size):
        out = batch(inst, rng, size)
        part, typ = out.partner[:, :n], out.types[:, :n]
        hit = (part >= 0) & (part < U)
        ii = np.broadcast_to(np.arange(n), part.shape)[hit]
        flat = (ii * U + part[hit]) * T + typ[hit]
        return np.bincount(flat, minlength=len(keys)), float(out.weight(inst).sum())

    return Runner(keys, run)


def policy_bounds(inst: Instance, x: Sequence[np.ndarray], gamma: float) -> np.ndarray:
    return gamma * np.concatenate([np.asarray(x[i], dtype=float) for i in range(inst.n_items)])


def matching_bounds(inst: MatchingInstance, gamma: Callable[[float], float]) -> np.ndarray:
    from .matching.algorithms import edge_bounds

    b = edge_bounds(inst, gamma)
    return b[: inst.n_original_online, : inst.n_original_offline].ravel()


@dataclass(eq=False)
class TrialReport:
    trials: int
    seed: int
    keys: tuple[str, ...]
    counts: np.ndarray
    value_sum: float
    wall_time: float = field(default=0.0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, TrialReport):
            return NotImplemented
        return (self.trials, self.seed, self.keys, self.value_sum) == \
            (other.trials, other.seed, other.keys, other.value_sum) and np.array_equal(self.counts, other.counts)

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def se(self) -> np.ndarray:
        f = self.freq
        return np.sqrt(f * (1 - f) / self.trials)

    @property
    def mean_value(self) -> float:
        return self.value_sum / self.trials

    def value_se_bound(self, value_max: float) -> float:
        """Crude s.e. bound for the mean value when values lie in ``[0, value_max]``."""
        return value_max / (2 * math.sqrt(self.trials))

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "seed": self.seed,
            "mean_value": self.mean_value,
            "wall_time": self.wall_time,
            "freq": {k: float(f) for k, f in zip(self.keys, self.freq)},
            "se": {k: float(s) for k, s in zip(self.keys, self.se)},
        }


def _block_sizes(trials: int, block: int) -> list[int]:
    full, rest = divmod(trials, block)
    return [block] * full + ([rest] if rest else [])


def estimate(runner: Runner, trials: int, master_seed: int, threads: int = 1,
             block: int = BLOCK) -> TrialReport:
    """Run ``trials`` simulations split into fixed-size blocks.

    Block ``b`` draws from ``SeedSequence([master_seed, b])``, so the report
    depends only on ``(master_seed, trials, block)`` and not on ``threads``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    sizes = _block_sizes(trials, block)

    def job(b):
        return runner.run(np.random.default_rng(np.random.SeedSequence([master_seed, b])), sizes[b])

    start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    counts = np.sum([c for c, _ in parts], axis=0).astype(np.int64)
    value = math.fsum(v for _, v in parts)
    return TrialReport(trials, master_seed, runner.keys, counts, value, time.perf_counter() - start)


@dataclass(frozen=True)
class Dominance:
    keys: tuple[str, ...]
    freq: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    margin: np.ndarray  # (freq - bound) / se, +inf where se == 0 and freq >= bound
    threshold: float

    @property
    def failed(self) -> list[str]:
        return [k for k, m in zip(self.keys, self.margin) if m < -self.threshold]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "freq", "se", "bound", "margin"])
        for row in zip(self.keys, self.freq, self.se, self.bound, self.margin):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"passed": self.passed, "threshold": self.threshold, "failed": self.failed,
                "worst_margin": float(np.min(self.margin)) if len(self.margin) else None}


def dominance_report(report: TrialReport, bounds: np.ndarray, threshold: float = SE_THRESHOLD) -> Dominance:
    """Flag keys whose frequency falls more than ``threshold`` s.e. below the bound.

    With zero observed variance the margin is measured in absolute terms
    against a floor of one trial.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != report.freq.shape:
        raise ValueError("bounds must align with the report keys")
    f, se = report.freq, report.se
    floor = np.maximum(se, 1.0 / report.trials)
    margin = (f - bounds) / floor
    return Dominance(report.keys, f, se, bounds, margin, threshold)


def report_json(report: TrialReport, dom: Dominance | None = None) -> str:
    doc = report.to_dict()
    if dom is not None:
        doc["dominance"] = dom.to_dict()
    return json.dumps(doc, indent=2)
