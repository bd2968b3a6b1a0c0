"""Train every on/off combination of the three design choices and attribute the gains."""

from __future__ import annotations

import csv
import itertools
from fractions import Fraction
from pathlib import Path

import numpy as np

from brclab.diagnostics import CoalitionValueTable, shapley, shapley_shares
from brclab.harness.config import PLAYERS, RunConfig
from brclab.harness.runner import map_jobs, run_seed


def variants(players=PLAYERS):
    """All ``2^n`` toggle dicts, from everything off to everything on."""
    out = []
    for r in range(len(players) + 1):
        for on in itertools.combinations(players, r):
            out.append({p: p in on for p in players})
    return out


def variant_name(variant) -> str:
    on = [p for p, v in variant.items() if v]
    return "+".join(on) if on else "base"


def run_ablation(cfg: RunConfig, out_dir=None, run_fn=None) -> dict:
    """Train the 8 variants for every seed; write ``ablation.csv`` and ``shapley.csv``.

    ``v(S)`` is the mean over seeds of the mean normalized final score of the
    variant with exactly the players in ``S`` switched on. ``run_fn`` has the
    signature of :func:`run_seed` and is mainly a hook for tests.
    """
    root = Path(out_dir or cfg.output_dir) / "ablation"
    root.mkdir(parents=True, exist_ok=True)
    run_fn = run_fn or run_seed
    combos = variants()
    jobs = [(cfg, seed, root / variant_name(v) / f"seed_{seed}", v) for v in combos for seed in cfg.seeds]
    results = map_jobs(run_fn, jobs)
    launches = [(variant_name(job[3]), job[1]) for job in jobs]

    table = CoalitionValueTable(PLAYERS)
    per_variant = {}
    for k, v in enumerate(combos):
        rows = results[k * len(cfg.seeds):(k + 1) * len(cfg.seeds)]
        scores = [r["mean_score"] for r in rows]
        value = float(np.mean(scores))
        per_variant[variant_name(v)] = (v, scores, value)
        table[[p for p in PLAYERS if v[p]]] = value
    phi = shapley(table)
    shares = shapley_shares(phi)
    total = sum(phi.values())
    gap = Fraction(table[PLAYERS]) - Fraction(table[()])

    with open(root / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", *PLAYERS, *[f"seed_{s}" for s in cfg.seeds], "value"])
        for name, (v, scores, value) in per_variant.items():
            w.writerow([name, *[int(v[p]) for p in PLAYERS], *map(repr, scores), repr(value)])
    with open(root / "shapley.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "phi", "share"])
        for p in PLAYERS:
            w.writerow([p, repr(float(phi[p])), repr(shares[p])])
        w.writerow(["total", repr(float(total)), repr(float(gap))])
    return {"table": table, "phi": phi, "shares": shares, "efficient": total == gap,
            "launches": launches, "dir": str(root)}
