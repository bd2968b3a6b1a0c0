"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The desk-scale experiments (criteria 4, 5, 7 and 8) share trained runs through
module fixtures: the multi-task checkpoints of criterion 5 are the sources for
the transfer criteria.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

from brclab import transfer
from brclab.agents import AgentConfig, Trainer
from brclab.autodiff import BroNet, TanhGaussianActor, grad_check, ops
from brclab.diagnostics import (
    CoalitionValueTable,
    bootstrap_ci,
    grad_conflict_rate,
    normalized_score,
    relative_variance,
    relative_variance_series,
    shapley,
)
from brclab.distributional import cross_entropy_loss, make_support, project
from brclab.harness.ablation import run_ablation
from brclab.harness.checkpoint import load_checkpoint
from brclab.harness.config import RunConfig
from brclab.harness.runner import run_seed
from brclab.harness.transfer_run import run_protocol, scratch_run, selected_score, steps_to_threshold
from brclab.retnorm import episode_returns
from oracles import bootstrap_reference, brute_force_projection, shapley_by_orderings

SEEDS = [0, 1, 2, 3, 4]
POINT_TASKS = list(range(8))
HELD_OUT = [8, 9]
# desk-scale learner shared by the PointGoal experiments
DESK = dict(critic_width=64, actor_width=32, batch_size=64, buffer_size=20_000, tau=0.02, critic_lr=1e-3,
            actor_lr=1e-3)
TREND_STEPS = 1500  # per-task env steps for the multi/single comparison
TRANSFER_STEPS = 1000
TRANSFER_EVAL = 50


# ---------------------------------------------------------------------------
# 1. gradients


def _critic_sq(net, x):
    return ops.sum(ops.square(net(x)))


def test_criterion_01_gradient_correctness(report):
    start = time.perf_counter()
    worst = {"critic": 0.0, "actor": 0.0, "ce": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        critic = BroNet(5, 8, 2, 3, rng, head_init="orthogonal")
        worst["critic"] = max(worst["critic"], grad_check(critic, rng.standard_normal((4, 5)), _critic_sq))

        actor = TanhGaussianActor(5, 8, 1, 2, rng)
        x, noise = rng.standard_normal((4, 5)), rng.standard_normal((4, 2))

        def actor_obj(a, x, noise=noise):
            action, logp = a(x, noise)
            return ops.add(ops.sum(ops.square(action)), ops.sum(logp))

        worst["actor"] = max(worst["actor"], grad_check(actor, x, actor_obj))

        dist_net = BroNet(5, 8, 1, 11, rng, head_init="orthogonal")
        target = rng.dirichlet(np.ones(11), size=4)
        worst["ce"] = max(worst["ce"], grad_check(dist_net, rng.standard_normal((4, 5)),
                                                  lambda n, x, t=target: cross_entropy_loss(n(x), t)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"max rel err {detail} (<= 1e-4); {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# 2. projection oracle


def test_criterion_02_projection_oracle(report):
    rng = np.random.default_rng(2)
    worst_err = worst_mass = 0.0
    for _ in range(1000):
        n_atoms = int(rng.integers(2, 12))
        lo = float(rng.uniform(-5, 0))
        support = make_support(lo, lo + float(rng.uniform(0.5, 10)), n_atoms)
        k = int(rng.integers(1, 12))
        atoms = rng.uniform(support.v_min - 2, support.v_max + 2, size=k)
        probs = rng.dirichlet(np.ones(k))
        out = project(atoms, probs, support).probs
        worst_err = max(worst_err, float(np.max(np.abs(out - brute_force_projection(atoms, probs, support.atoms)))))
        worst_mass = max(worst_mass, abs(float(out.sum()) - 1.0))
    ok = worst_err <= 1e-12 and worst_mass <= 1e-9
    assert report(2, ok, f"1000 instances: max abs diff {worst_err:.1e} (<= 1e-12), mass {worst_mass:.1e} (<= 1e-9)")


# ---------------------------------------------------------------------------
# 3. normalization bound


def _episodes(path):
    episodes, current = {}, {}
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        current.setdefault(rec["task"], []).append(rec["reward"])
        if rec["terminated"] or rec["truncated"]:
            episodes.setdefault(rec["task"], []).append(np.array(current.pop(rec["task"])))
    return episodes


def test_criterion_03_normalization_bound(report, tmp_path):
    cfg = AgentConfig(critic_width=32, discrete_batch_size=64, discrete_buffer_size=5000)
    log = tmp_path / "episodes.jsonl"
    tasks = [0, 1, 2, 3, 4]
    tr = Trainer("scaled_chain", tasks, cfg, seed=3, eval_interval=10**9, episode_log=log).run(1500)
    tr.suite.close()
    tracker = tr.agent.tracker
    worst, count = 0.0, 0
    for k, task in enumerate(tasks):
        row = tr.task_rows[k]
        assert tracker.entropy_correction(row) == 0.0
        for rewards in _episodes(log)[task]:
            g = episode_returns(tracker.normalize_rewards(row, rewards), cfg.discount)
            worst = max(worst, float(np.max(np.abs(g))))
            count += 1
    ok = count > 0 and worst <= cfg.v_max + 1e-9
    assert report(3, ok, f"{count} episodes, max normalized |return| {worst:.12f} (<= {cfg.v_max} + 1e-9)")


# ---------------------------------------------------------------------------
# 4. gradient-norm dispersion, CE + normalization vs MSE

DISPERSION_STEPS = 2000


def _tail_dispersion(cfg, seed):
    tr = Trainer("scaled_chain", [0, 1, 2, 3, 4], cfg, seed=seed, eval_interval=10**9,
                 diag_interval=DISPERSION_STEPS // 40).run(DISPERSION_STEPS)
    tail = [v for step, v in relative_variance_series(tr.records, "grad_norm") if step > 0.75 * DISPERSION_STEPS]
    return float(np.mean(tail))


def test_criterion_04_gradient_dispersion(report):
    start = time.perf_counter()
    base = dict(critic_width=32, discrete_batch_size=64, discrete_buffer_size=5000)
    ce = np.mean([_tail_dispersion(AgentConfig(**base), s) for s in SEEDS])
    mse = np.mean([_tail_dispersion(AgentConfig(**base, loss="mse", normalize_returns=False), s) for s in SEEDS])
    elapsed = time.perf_counter() - start
    ok = mse >= 2 * ce and elapsed < 600
    assert report(4, ok, f"sigma/mu of grad norms: CE+norm {ce:.3f}, MSE {mse:.3f}, ratio {mse / ce:.2f} (>= 2); "
                         f"{elapsed:.0f}s (< 600s)")


# ---------------------------------------------------------------------------
# 5. multi-task vs single-task


@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    """Multi-task and single-task runs on the 8 training goals, 5 seeds, with timing."""
    root = tmp_path_factory.mktemp("trend")
    agent = AgentConfig(**DESK)
    start = time.perf_counter()
    multi, single = [], []
    for seed in SEEDS:
        cfg = RunConfig(tasks=POINT_TASKS, agent=agent, env_steps=TREND_STEPS, seeds=[seed])
        multi.append(run_seed(cfg, seed, root / "multi" / f"seed_{seed}"))
        per_task = []
        for task in POINT_TASKS:
            cfg = RunConfig(tasks=[task], agent=agent, env_steps=TREND_STEPS, seeds=[seed])
            per_task.append(run_seed(cfg, seed, root / f"single_{task}" / f"seed_{seed}"))
        single.append(per_task)
    return {"multi": multi, "single": single, "elapsed": time.perf_counter() - start}


def test_criterion_05_multitask_vs_single(report, trend_runs):
    multi = np.array([r["mean_score"] for r in trend_runs["multi"]])
    single = np.array([np.mean([r["mean_score"] for r in per_task]) for per_task in trend_runs["single"]])
    m_lo, m_hi = bootstrap_ci(multi)
    s_lo, s_hi = bootstrap_ci(single)
    multi_steps = [r["gradient_steps"] for r in trend_runs["multi"]]
    single_steps = [sum(r["gradient_steps"] for r in per_task) for per_task in trend_runs["single"]]
    accounting = all(8 * m == s for m, s in zip(multi_steps, single_steps))
    if m_lo > s_hi:
        verdict = "multi better, CIs disjoint"
    elif m_hi < s_lo:
        verdict = "single better, CIs disjoint"
    else:
        verdict = "tie (CIs overlap)"
    elapsed = trend_runs["elapsed"]
    ok = not m_hi < s_lo and accounting and elapsed < 1200
    assert report(5, ok, f"multi {multi.mean():.3f} [{m_lo:.3f}, {m_hi:.3f}] vs single {single.mean():.3f} "
                         f"[{s_lo:.3f}, {s_hi:.3f}]: {verdict}; gradient steps {multi_steps[0]} vs "
                         f"{single_steps[0]} (8x: {accounting}); {elapsed:.0f}s (< 1200s)")


# ---------------------------------------------------------------------------
# 6. ablation protocol


def test_criterion_06_ablation_protocol(report, tmp_path):
    agent = AgentConfig(critic_width=32, discrete_batch_size=32, discrete_buffer_size=2000, embedding_dim=4)
    cfg = RunConfig(suite="scaled_chain", tasks=[0, 2, 4], agent=agent, small_width=8, env_steps=300,
                    seeds=[0, 1], output_dir=str(tmp_path))
    res = run_ablation(cfg)
    table = res["table"]
    complete = all(table[s] is not None for s in table.subsets())
    launches = sorted(res["launches"])
    once = len(launches) == 16 and len(set(launches)) == 16
    total = sum(res["phi"].values(), Fraction(0))
    exact = total == Fraction(table[("SQ", "CE", "TE")]) - Fraction(table[()])
    shares = ", ".join(f"{p} {res['shares'][p]:.2f}" for p in ("SQ", "CE", "TE"))
    ok = complete and once and exact and res["efficient"] and (tmp_path / "ablation" / "shapley.csv").exists()
    assert report(6, ok, f"8 variants x 2 seeds launched once: {once}; efficiency exact: {exact}; shares {shares}")


# ---------------------------------------------------------------------------
# 7. embedding selection on a held-out goal


def test_criterion_07_embedding_selection(report, trend_runs):
    target = HELD_OUT[0]
    few, zero, oracle, unchanged = [], [], [], True
    for seed, run in zip(SEEDS, trend_runs["multi"]):
        ckpt = load_checkpoint(run["checkpoint"])
        agent, _ = transfer.load_agent(ckpt)
        full = [selected_score(ckpt, agent, target, row) for row in range(len(POINT_TASKS))]
        sel = transfer.embedding_tuning_select(ckpt, target, budget=300, mode="few_shot")
        zs = transfer.embedding_tuning_select(ckpt, target, mode="zero_shot", rng=np.random.default_rng(seed))
        unchanged &= sel.checksum_before == sel.checksum_after and sel.consumed_steps <= 300
        few.append(full[sel.row])
        zero.append(full[zs.row])
        oracle.append(max(full))
    ratio = np.mean(few) / np.mean(oracle)
    ok = ratio >= 0.8 and unchanged
    assert report(7, ok, f"task {target}: few-shot {np.mean(few):.3f}, best pretrained embedding {np.mean(oracle):.3f}, "
                         f"ratio {ratio:.2f} (>= 0.8); zero-shot {np.mean(zero):.3f}; checksum unchanged: {unchanged}")


# ---------------------------------------------------------------------------
# 8. model transfer


def test_criterion_08_model_transfer(report, trend_runs):
    cfg = RunConfig(tasks=POINT_TASKS, agent=AgentConfig(**DESK), env_steps=TRANSFER_STEPS,
                    eval_interval=TRANSFER_EVAL)
    fractions, data_final, model_final, scratch_final = {}, [], [], []
    for seed, run in zip(SEEDS, trend_runs["multi"]):
        ckpt = load_checkpoint(run["checkpoint"])
        for target in HELD_OUT:
            _, scratch = scratch_run(ckpt, target, cfg, seed)
            model = run_protocol(ckpt, target, cfg, "model", seed)
            data = run_protocol(ckpt, target, cfg, "data", seed)
            reached = steps_to_threshold(model["curve"], scratch)
            fractions.setdefault(target, []).append(np.inf if reached is None else reached / TRANSFER_STEPS)
            scratch_final.append(scratch)
            model_final.append(model["final_score"])
            data_final.append(data["final_score"])
    medians = {t: float(np.median(v)) for t, v in fractions.items()}
    ok = all(m <= 0.5 for m in medians.values())
    med = ", ".join(f"task {t} {m:.2f}" for t, m in medians.items())
    assert report(8, ok, f"median fraction of scratch steps to reach scratch final: {med} (<= 0.5); final scores "
                         f"scratch {np.mean(scratch_final):.3f}, model {np.mean(model_final):.3f}, "
                         f"data {np.mean(data_final):.3f}")


# ---------------------------------------------------------------------------
# 9. unit examples


def test_criterion_09_unit_examples(report):
    table = CoalitionValueTable(("SQ", "CE", "TE"))
    values = {(): 0, ("SQ",): 4, ("CE",): 1, ("TE",): 1, ("SQ", "CE"): 6, ("SQ", "TE"): 6, ("CE", "TE"): 2,
              ("SQ", "CE", "TE"): 8}
    for s, v in values.items():
        table[s] = v
    phi = shapley(table)
    by_orderings = shapley_by_orderings(("SQ", "CE", "TE"), lambda s: values[tuple(p for p in ("SQ", "CE", "TE")
                                                                                      if p in s)])
    checks = {
        "shapley (5, 1.5, 1.5)": [phi[p] for p in ("SQ", "CE", "TE")] == [5, Fraction(3, 2), Fraction(3, 2)]
        and phi == by_orderings and sum(phi.values()) == 8,
        "bootstrap oracle": np.allclose(bootstrap_ci([0, 0, 0, 1, 1, 1], seed=11),
                                        bootstrap_reference([0, 0, 0, 1, 1, 1], 2000, 0.95, 11), rtol=0, atol=1e-12)
        and bootstrap_ci([2.5] * 4) == (2.5, 2.5),
        "h1-walk 0.50": abs(normalized_score(351.19, 2.377, 700.0) - 0.50) <= 0.005
        and normalized_score(700.0, 2.377, 700.0) == 1.0 and normalized_score(2.377, 2.377, 700.0) == 0.0,
        "conflict rates": grad_conflict_rate([[1, 0], [0, 1]]).rate == 0
        and grad_conflict_rate([[1, 0], [-1, 0]]).rate == 1
        and abs(grad_conflict_rate([[1, 0], [-1, 0], [0, 1]]).rate - 1 / 3) <= 1e-12,
        "relative variance (1, 3)": abs(relative_variance([1, 3]) - 2 ** 0.5 / 2) <= 1e-12
        and relative_variance([4, 4, 4]) == 0,
    }
    ok = all(checks.values())
    assert report(9, ok, "; ".join(f"{k}: {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))


# ---------------------------------------------------------------------------
# 10. determinism and resume


def test_criterion_10_determinism_and_resume(report, tmp_path):
    agent = AgentConfig(critic_width=16, actor_width=16, batch_size=16, buffer_size=500, embedding_dim=4)
    cfg = RunConfig(tasks=[0, 1], agent=agent, env_steps=120, eval_interval=30, diag_interval=40)
    a = run_seed(cfg, 4, tmp_path / "a")
    b = run_seed(cfg, 4, tmp_path / "b")
    same = (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    run_seed(cfg, 4, tmp_path / "c", stop_at=50)
    mid = tmp_path / "mid.brc"
    mid.write_bytes((tmp_path / "c" / "final.brc").read_bytes())
    c = run_seed(cfg, 4, tmp_path / "c", resume=mid)
    resumed = ((tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "c" / "metrics.jsonl").read_bytes()
               and a["checkpoint_hash"] == c["checkpoint_hash"] == b["checkpoint_hash"])
    ok = same and resumed
    assert report(10, ok, f"rerun metrics byte-identical: {same}; resume at 50 matches unresumed run: {resumed}")
