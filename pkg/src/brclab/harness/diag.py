"""Summary tables computed from a metrics JSONL stream."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from brclab.diagnostics import bootstrap_ci, read_metrics, relative_variance_series, write_summary_csv

DISPERSION_METRICS = ("td_loss", "grad_norm", "entropy")


def dispersion_rows(records):
    """``(metric, seed, step, sigma/mu)`` across tasks; empty for single-task streams."""
    rows = []
    for seed in sorted({r.seed for r in records}):
        for name in DISPERSION_METRICS:
            for step, value in relative_variance_series(records, name, seed=seed):
                rows.append((name, seed, step, value))
    return rows


def conflict_rows(records):
    return [(r.seed, r.step, r.value) for r in records if r.name == "conflict_rate"]


def summary_rows(records, seed=0):
    """Point estimate and 95% bootstrap interval of each metric's final values.

    For every metric the samples are the values at the last step each
    ``(seed, task)`` pair reported.
    """
    last = {}
    for r in records:
        key = (r.name, r.seed, r.task)
        if key not in last or r.step >= last[key][0]:
            last[key] = (r.step, r.value)
    by_name = {}
    for (name, _, _), (_, value) in sorted(last.items()):
        if np.isfinite(value):
            by_name.setdefault(name, []).append(value)
    return [(name, float(np.mean(v)), *bootstrap_ci(v, seed=seed)) for name, v in sorted(by_name.items())]


def run_diag(metrics_path, out_dir=None) -> dict:
    """Write ``relvar.csv``, ``conflict.csv`` and ``summary.csv`` next to the stream (or into ``out_dir``)."""
    records = read_metrics(metrics_path)
    out = Path(out_dir) if out_dir else Path(metrics_path).parent
    out.mkdir(parents=True, exist_ok=True)
    disp = dispersion_rows(records)
    with open(out / "relvar.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "seed", "step", "relvar"])
        for name, seed, step, value in disp:
            w.writerow([name, seed, step, repr(value)])
    conf = conflict_rows(records)
    with open(out / "conflict.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "step", "conflict_rate"])
        for seed, step, value in conf:
            w.writerow([seed, step, repr(value)])
    summ = summary_rows(records)
    write_summary_csv(out / "summary.csv", summ)
    return {"relvar": disp, "conflict": conf, "summary": summ, "dir": str(out)}
