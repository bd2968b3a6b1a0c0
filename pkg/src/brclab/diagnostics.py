"""Measurement toolkit: gradient conflict, cross-task dispersion, exact
Shapley attribution, bootstrap confidence intervals and score normalization.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from brclab import kernels


# ---------------------------------------------------------------------------
# gradient conflict and dispersion


@dataclass
class ConflictResult:
    rate: float
    conflicts: int
    pairs: int
    skipped: int

    def __float__(self):
        return self.rate


def grad_conflict_rate(per_task_grads) -> ConflictResult:
    """Share of task pairs whose gradients have negative cosine similarity.

    Pairs involving a zero-norm gradient are skipped and counted. If every
    pair is skipped the rate is nan.
    """
    grads = [np.asarray(g, dtype=np.float64).ravel() for g in per_task_grads]
    if len(grads) < 2:
        raise ValueError("conflict rate needs gradients from at least two tasks")
    norms = [float(np.linalg.norm(g)) for g in grads]
    conflicts = pairs = skipped = 0
    for i, j in itertools.combinations(range(len(grads)), 2):
        if norms[i] == 0.0 or norms[j] == 0.0:
            skipped += 1
            continue
        pairs += 1
        if float(np.dot(grads[i], grads[j])) / (norms[i] * norms[j]) < 0.0:
            conflicts += 1
    rate = conflicts / pairs if pairs else float("nan")
    return ConflictResult(rate, conflicts, pairs, skipped)


def relative_variance(values) -> float:
    """Sample standard deviation (ddof=1) over the mean."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("relative variance needs at least two values")
    mu = float(v.mean())
    if abs(mu) < 1e-12:
        raise ValueError("relative variance is undefined for a mean of zero")
    return float(v.std(ddof=1)) / mu


# ---------------------------------------------------------------------------
# Shapley values


class CoalitionValueTable:
    """Value of every subset of a small player set."""

    def __init__(self, players, values=None):
        self.players = tuple(players)
        if len(set(self.players)) != len(self.players):
            raise ValueError("player names must be unique")
        if not 1 <= len(self.players) <= 10:
            raise ValueError("coalition tables support 1 to 10 players")
        self.values: dict[frozenset, float] = {}
        for coalition, v in (values or {}).items():
            self[coalition] = v

    def _key(self, coalition) -> frozenset:
        key = frozenset(coalition)
        unknown = key - set(self.players)
        if unknown:
            raise KeyError(f"unknown players {sorted(unknown)}")
        return key

    def __setitem__(self, coalition, value):
        self.values[self._key(coalition)] = value

    def __getitem__(self, coalition):
        key = self._key(coalition)
        if key not in self.values:
            raise KeyError(f"coalition table is missing subset {{{', '.join(sorted(key))}}}")
        return self.values[key]

    def subsets(self):
        for r in range(len(self.players) + 1):
            for combo in itertools.combinations(self.players, r):
                yield frozenset(combo)

    def check_complete(self):
        for s in self.subsets():
            self[s]

    def rows(self):
        return [(sorted(s, key=self.players.index), self[s]) for s in self.subsets()]


def shapley(table: CoalitionValueTable, exact: bool = True) -> dict:
    """Exact Shapley values by enumerating every coalition.

    Weights are exact fractions. Values that are ints or Fractions give
    exactly efficient results; floats are converted exactly before summing.
    """
    table.check_complete()
    players = table.players
    n = len(players)
    fact = [math.factorial(k) for k in range(n + 1)]
    phi = {}
    for p in players:
        others = [q for q in players if q != p]
        total = Fraction(0)
        for r in range(n):
            weight = Fraction(fact[r] * fact[n - r - 1], fact[n])
            for combo in itertools.combinations(others, r):
                s = frozenset(combo)
                total += weight * (Fraction(table[s | {p}]) - Fraction(table[s]))
        phi[p] = total if exact else float(total)
    return phi


def shapley_shares(phi: dict) -> dict:
    """``phi_i / sum(phi)``; nan when the total is zero."""
    total = sum(Fraction(v) for v in phi.values())
    if total == 0:
        return {p: float("nan") for p in phi}
    return {p: float(Fraction(v) / total) for p, v in phi.items()}


# ---------------------------------------------------------------------------
# bootstrap and score normalization


def bootstrap_ci(samples, n_resamples: int = 2000, confidence: float = 0.95, seed=0):
    """Percentile bootstrap interval for the mean.

    Resample indices are ``rng.integers(0, n, (n_resamples, n))`` from
    ``numpy.random.default_rng(seed)``. The interval is widened to contain
    the sample mean if floating-point rounding would leave it outside.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("bootstrap needs at least one sample")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_resamples, x.size))
    means = kernels.bootstrap_means(x, idx)
    tail = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    mean = float(x.mean())
    return min(float(lo), mean), max(float(hi), mean)


def normalized_score(returns, random_score: float, optimal_score: float):
    """``(returns - random) / (optimal - random)``."""
    if optimal_score == random_score:
        raise ValueError("normalized score undefined when optimal equals random")
    out = (np.asarray(returns, dtype=np.float64) - random_score) / (optimal_score - random_score)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# metric records


@dataclass
class MetricRecord:
    step: int
    task: int
    name: str
    value: float
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "task": self.task, "name": self.name,
                           "value": self.value, "seed": self.seed})


def read_metrics(path) -> list[MetricRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = MetricRecord(int(d["step"]), int(d["task"]), str(d["name"]), float(d["value"]), int(d["seed"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed metric record ({exc})") from None
            records.append(rec)
    return records


def write_metrics(path, records, mode="w"):
    with open(path, mode) as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def write_summary_csv(path, rows):
    """Rows of ``(metric, point, ci_lo, ci_hi)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "point", "ci_lo", "ci_hi"])
        for metric, point, lo, hi in rows:
            w.writerow([metric, repr(float(point)), repr(float(lo)), repr(float(hi))])


def series(records, name):
    """``{step: {task: value}}`` for one metric name."""
    out: dict[int, dict[int, float]] = {}
    for r in records:
        if r.name == name:
            out.setdefault(r.step, {})[r.task] = r.value
    return out


def relative_variance_series(records, name, seed=None):
    """``[(step, sigma/mu)]`` across tasks, skipped where fewer than 2 tasks report."""
    recs = [r for r in records if seed is None or r.seed == seed]
    out = []
    for step, by_task in sorted(series([r for r in recs if r.task >= 0], name).items()):
        vals = [v for v in by_task.values() if np.isfinite(v)]
        if len(vals) < 2 or abs(np.mean(vals)) < 1e-12:
            continue
        out.append((step, relative_variance(vals)))
    return out


__all__ = [
    "CoalitionValueTable",
    "ConflictResult",
    "MetricRecord",
    "bootstrap_ci",
    "grad_conflict_rate",
    "normalized_score",
    "read_metrics",
    "relative_variance",
    "relative_variance_series",
    "series",
    "shapley",
    "shapley_shares",
    "write_metrics",
    "write_summary_csv",
]
