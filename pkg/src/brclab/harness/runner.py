"""Training runs on disk: one directory per seed, metrics streamed as JSONL."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from brclab.agents.train import Trainer
from brclab.diagnostics import MetricRecord, bootstrap_ci, write_summary_csv
from brclab.harness.checkpoint import load_checkpoint, save_checkpoint
from brclab.harness.config import RunConfig

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "final.brc"
SUMMARY_FILE = "summary.csv"


def max_workers() -> int:
    """Worker cap from ``BRC_THREADS`` (default 1, i.e. run in-process)."""
    raw = os.environ.get("BRC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BRC_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_jobs(fn, jobs):
    """``[fn(*job) for job in jobs]``, spread over up to ``BRC_THREADS`` processes."""
    jobs = list(jobs)
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


class JsonlSink:
    """Appends metric records to a file as they are emitted."""

    def __init__(self, path, mode="w"):
        self.fh = open(path, mode)

    def __call__(self, rec: MetricRecord):
        self.fh.write(rec.to_json() + "\n")

    def close(self):
        self.fh.close()


def checkpoint_meta(trainer: Trainer, cfg: RunConfig, variant=None) -> tuple[dict, dict]:
    meta, arrays = trainer.state()
    agent_cfg = trainer.cfg
    meta.update({
        "suite": trainer.suite.name,
        "task_ids": trainer.suite.task_ids,
        "n_goals": trainer.suite.n_goals,
        "agent_config": agent_cfg.to_dict(),
        "obs_dim": trainer.suite.obs_dim,
        "action_dim": trainer.suite.action_dim,
        "num_rows": trainer.agent.num_tasks,
        "variant": variant,
        "config": cfg.to_dict(),
    })
    return meta, arrays


def final_scores(trainer: Trainer) -> np.ndarray:
    """Latest logged per-task scores, evaluating now if the last iteration was not evaluated."""
    scores = {r.task: r.value for r in trainer.records if r.name == "score" and r.step == trainer.iteration}
    if len(scores) != len(trainer.suite):
        return trainer.evaluate_and_log()
    return np.array([scores[t] for t in trainer.suite.task_ids])


def run_seed(cfg: RunConfig, seed: int, out_dir, variant=None, resume=None, stop_at=None) -> dict:
    """Train one seed; writes metrics JSONL, a checkpoint and a per-seed config echo.

    ``resume`` continues from a checkpoint written by an earlier call (metrics
    are appended); ``stop_at`` ends training early at that iteration.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agent_cfg = cfg.effective_agent(variant)
    metrics_path = out / METRICS_FILE
    sink = JsonlSink(metrics_path, "a" if resume else "w")
    try:
        trainer = Trainer(cfg.suite, cfg.tasks, agent_cfg, seed=seed, n_goals=cfg.n_goals,
                          eval_interval=cfg.eval_interval, diag_interval=cfg.diag_interval, sink=sink)
        if resume is not None:
            ckpt = load_checkpoint(resume)
            if ckpt.meta.get("seed") != seed or ckpt.meta.get("task_ids") != trainer.suite.task_ids:
                raise ValueError("resume checkpoint was written by a different seed or task list")
            trainer.restore(ckpt.meta, ckpt.arrays)
        end = cfg.env_steps if stop_at is None else min(stop_at, cfg.env_steps)
        trainer.run(max(0, end - trainer.iteration))
        scores = final_scores(trainer) if trainer.iteration == cfg.env_steps else None
    finally:
        sink.close()
    meta, arrays = checkpoint_meta(trainer, cfg, variant)
    digest = save_checkpoint(out / CHECKPOINT_FILE, meta, arrays)
    (out / "config.json").write_text(json.dumps({**cfg.echo(), "seed": seed, "variant": variant,
                                                 "effective_agent": agent_cfg.to_dict()}, indent=2, sort_keys=True))
    return {
        "seed": seed,
        "dir": str(out),
        "iteration": trainer.iteration,
        "scores": None if scores is None else [float(s) for s in scores],
        "mean_score": None if scores is None else float(np.mean(scores)),
        "gradient_steps": int(trainer.agent.updates),
        "checkpoint": str(out / CHECKPOINT_FILE),
        "checkpoint_hash": digest,
    }


def seed_dir(root, seed) -> Path:
    return Path(root) / f"seed_{seed}"


def summarize(results, task_ids, path, seed=0):
    """Per-task and mean final score over seeds with 95% bootstrap intervals."""
    done = [r for r in results if r["scores"] is not None]
    rows = []
    if done:
        scores = np.array([r["scores"] for r in done])
        for k, task in enumerate(task_ids):
            col = scores[:, k]
            rows.append((f"score/task{task}", col.mean(), *bootstrap_ci(col, seed=seed)))
        means = scores.mean(axis=1)
        rows.append(("score/mean", means.mean(), *bootstrap_ci(means, seed=seed)))
    write_summary_csv(path, rows)
    return rows


def train_all(cfg: RunConfig, out_dir=None, seeds=None, resume=None, stop_at=None) -> list[dict]:
    """Run every seed of ``cfg`` and write the cross-seed summary CSV."""
    root = Path(out_dir or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.seeds if seeds is None else seeds)
    if resume is not None and len(seeds) != 1:
        raise ValueError("resume needs exactly one seed")
    jobs = [(cfg, s, seed_dir(root, s), cfg.variant, resume, stop_at) for s in seeds]
    results = map_jobs(run_seed, jobs)
    summarize(results, cfg.tasks, root / SUMMARY_FILE)
    return results
