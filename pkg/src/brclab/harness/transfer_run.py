"""Transfer experiments: run a protocol against a checkpoint and write the report."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from brclab import transfer
from brclab.agents.config import AgentConfig
from brclab.agents.train import Trainer, evaluate_policy
from brclab.diagnostics import normalized_score
from brclab.experience.envs import score_anchors
from brclab.harness.checkpoint import load_checkpoint
from brclab.harness.config import RunConfig
from brclab.harness.runner import JsonlSink, final_scores

REPORT_COLUMNS = ("protocol", "source", "target", "seed", "budget", "final_score", "steps_to_threshold",
                  "consumed_steps", "checkpoint_hash", "fresh_weights")


def score_curve(records, task) -> list[tuple[int, float]]:
    return [(r.step, r.value) for r in records if r.name == "score" and r.task == task]


def steps_to_threshold(curve, threshold: float):
    """First evaluated iteration whose score reaches ``threshold``; None if never."""
    for step, value in curve:
        if value >= threshold:
            return step
    return None


def _eval_interval(cfg: RunConfig) -> int:
    return cfg.eval_interval or max(1, cfg.env_steps // 20)


def scratch_run(ckpt, target: int, cfg: RunConfig, seed: int, sink=None):
    """Single-task learner trained from random weights with the checkpoint's agent config."""
    agent_cfg = AgentConfig.from_dict(ckpt.meta["agent_config"])
    trainer = Trainer(ckpt.meta["suite"], [target], agent_cfg, seed=seed, n_goals=int(ckpt.meta["n_goals"]),
                      eval_interval=_eval_interval(cfg), sink=sink)
    trainer.run(cfg.env_steps)
    return trainer, float(final_scores(trainer)[0])


def selected_score(ckpt, agent, target: int, row: int) -> float:
    suite, n_goals = ckpt.meta["suite"], int(ckpt.meta["n_goals"])
    discount = ckpt.meta["agent_config"]["discount"] if suite == "scaled_chain" else 1.0
    ret = evaluate_policy(agent, suite, [target], [row], n_goals, discount)[0]
    lo, hi = score_anchors(suite, target, ckpt.meta["agent_config"]["discount"], n_goals)
    return float(normalized_score(ret, lo, hi))


def run_protocol(ckpt, target: int, cfg: RunConfig, protocol: str, seed: int, sink=None) -> dict:
    """One ``(protocol, target, seed)`` cell of the report (without the threshold column)."""
    row = {"protocol": protocol, "target": target, "seed": seed, "checkpoint_hash": ckpt.digest,
           "fresh_weights": transfer.fresh_flag(protocol)}
    if protocol == "embedding_tuning":
        t = cfg.transfer
        sel = transfer.embedding_tuning_select(ckpt, target, t.budget, t.mode, np.random.default_rng(seed))
        if sel.checksum_before != sel.checksum_after:
            raise RuntimeError("embedding tuning changed frozen parameters")
        agent, _ = transfer.load_agent(ckpt)
        row.update(budget=t.budget, consumed_steps=sel.consumed_steps, selected_row=sel.row,
                   final_score=selected_score(ckpt, agent, target, sel.row), curve=[])
        return row
    if protocol == "model":
        trainer = transfer.model_transfer_trainer(ckpt, target, seed=seed, eval_interval=_eval_interval(cfg),
                                                  sink=sink)
    elif protocol == "data":
        trainer = transfer.data_transfer_seed(ckpt, target, seed=seed, eval_interval=_eval_interval(cfg), sink=sink)
    else:
        raise ValueError(f"unknown transfer protocol {protocol!r}")
    trainer.run(cfg.env_steps)
    score = float(final_scores(trainer)[0])
    row.update(budget="", consumed_steps=trainer.iteration, final_score=score,
               curve=score_curve(trainer.records, target))
    return row


def run_transfer(cfg: RunConfig, source, protocol: str | None = None, out_dir=None) -> list[dict]:
    """Run the protocol on every target and seed; write ``transfer.csv`` and learning curves.

    Steps-to-threshold is measured against ``cfg.transfer.threshold`` or, when
    that is unset, against the final score of a from-scratch learner with the
    same seed and step budget.
    """
    protocol = protocol or cfg.transfer.protocol
    if protocol not in transfer.PROTOCOLS:
        raise ValueError(f"unknown transfer protocol {protocol!r}; expected one of {transfer.PROTOCOLS}")
    ckpt = load_checkpoint(source)
    for target in cfg.transfer.targets:
        transfer.check_split(ckpt, target)
    out = Path(out_dir or cfg.output_dir) / "transfer"
    out.mkdir(parents=True, exist_ok=True)
    curves = JsonlSink(out / f"curves_{protocol}.jsonl")
    scratch_sink = JsonlSink(out / "curves_scratch.jsonl") if cfg.transfer.with_scratch else None
    rows = []
    try:
        for target in cfg.transfer.targets:
            for seed in cfg.seeds:
                row = run_protocol(ckpt, target, cfg, protocol, seed, sink=curves)
                row["source"] = str(source)
                threshold = cfg.transfer.threshold
                if cfg.transfer.with_scratch:
                    _, scratch = scratch_run(ckpt, target, cfg, seed, sink=scratch_sink)
                    row["scratch_score"] = scratch
                    threshold = scratch if threshold is None else threshold
                reached = steps_to_threshold(row["curve"], threshold) if threshold is not None else None
                row["steps_to_threshold"] = "" if reached is None else reached
                rows.append(row)
    finally:
        curves.close()
        if scratch_sink is not None:
            scratch_sink.close()
    with open(out / "transfer.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        extra = ["scratch_score"] if cfg.transfer.with_scratch else []
        w.writerow([*REPORT_COLUMNS, *extra])
        for r in rows:
            w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in REPORT_COLUMNS]
                       + [repr(r[c]) for c in extra])
    return rows
