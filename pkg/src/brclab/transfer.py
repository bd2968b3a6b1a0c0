"""Adapting a pretrained multi-task agent to a held-out task.

Three protocols:

* model transfer: load the pretrained weights, append an embedding row for
  the new task and keep training on the new task only;
* embedding tuning: freeze everything and pick one of the pretrained
  embeddings, either at random or by a short budgeted rollout of each;
* data transfer: a freshly initialised learner whose replay holds the
  pretraining transitions next to its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from brclab.agents.config import AgentConfig
from brclab.agents.train import Trainer, make_agent
from brclab.autodiff import AdamW
from brclab.experience.envs import Suite, make_env
from brclab.experience.replay import ReplayBuffer
from brclab.harness.checkpoint import Checkpoint, load_checkpoint

PROTOCOLS = ("model", "embedding_tuning", "data")
MAX_BUDGET = 1000


@dataclass
class TransferConfig:
    protocol: str
    target_task: int
    budget: int = 300
    mode: str = "few_shot"
    embedding_init: str = "mean"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown transfer protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if self.protocol == "embedding_tuning" and not 1 <= self.budget <= MAX_BUDGET:
            raise ValueError(f"embedding-tuning budget must lie in 1..{MAX_BUDGET}, got {self.budget}")
        if self.mode not in ("zero_shot", "few_shot"):
            raise ValueError(f"unknown embedding-tuning mode {self.mode!r}")
        if self.embedding_init != "mean":
            raise ValueError(f"unknown embedding init rule {self.embedding_init!r}")


# ---------------------------------------------------------------------------
# checkpoint helpers


def _as_checkpoint(source) -> Checkpoint:
    return source if isinstance(source, Checkpoint) else load_checkpoint(source)


def source_tasks(ckpt: Checkpoint) -> list[int]:
    return [int(t) for t in ckpt.meta["task_ids"]]


def check_split(ckpt: Checkpoint, target_task: int):
    """Refuse a target the source agent was trained on."""
    if int(target_task) in source_tasks(ckpt):
        raise ValueError(f"task {target_task} appears in the source checkpoint's training tasks "
                         f"{source_tasks(ckpt)}; transfer targets must be held out")


def load_agent(ckpt: Checkpoint, rng=None, optimizer=False):
    """Rebuild the pretrained agent (weights, embeddings, temperature) from a checkpoint."""
    cfg = AgentConfig.from_dict(ckpt.meta["agent_config"])
    suite = Suite(ckpt.meta["suite"], source_tasks(ckpt), int(ckpt.meta.get("n_goals", 8)))
    rng = np.random.default_rng(0) if rng is None else rng
    agent = make_agent(cfg, suite, rng, num_tasks=int(ckpt.meta["num_rows"]))
    if agent.embeddings is not None and ckpt.arrays["embeddings"].shape != agent.embeddings.matrix.shape:
        raise ValueError(f"checkpoint embedding table has shape {ckpt.arrays['embeddings'].shape}, "
                         f"expected {agent.embeddings.matrix.shape}")
    agent.load_state_arrays(ckpt.arrays, optimizer=optimizer)
    if hasattr(agent, "alpha"):
        agent.tracker.alpha = agent.alpha
    return agent, cfg


def frozen_checksum(agent) -> str:
    """Hash of every network parameter and the embedding table."""
    import hashlib

    h = hashlib.sha256()
    for name, arr in sorted(agent.state_arrays().items()):
        if name.startswith(("opt.", "tracker.", "agent.")):
            continue
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def _check_dims(ckpt: Checkpoint, target_task: int):
    suite = Suite(ckpt.meta["suite"], [target_task], int(ckpt.meta.get("n_goals", 8)))
    obs_dim, action_dim = ckpt.meta["obs_dim"], ckpt.meta["action_dim"]
    if (suite.obs_dim, suite.action_dim) != (obs_dim, action_dim):
        raise ValueError(f"target task has obs/action dims ({suite.obs_dim}, {suite.action_dim}); "
                         f"checkpoint expects ({obs_dim}, {action_dim})")


# ---------------------------------------------------------------------------
# model transfer


def model_transfer_init(source, target_task: int, rng=None):
    """Pretrained agent with one extra embedding row for ``target_task``.

    Returns ``(agent, row)``. Weights, targets and temperature come from the
    checkpoint; optimizers and the return tracker start fresh.
    """
    ckpt = _as_checkpoint(source)
    check_split(ckpt, target_task)
    _check_dims(ckpt, target_task)
    agent, cfg = load_agent(ckpt, rng)
    if agent.embeddings is None:
        raise ValueError("model transfer needs a checkpoint trained with task embeddings")
    row = agent.embeddings.append_row(agent.embeddings.matrix.mean(axis=0))
    agent.tracker.append_task()
    agent.num_tasks += 1
    lr = cfg.discrete_lr if ckpt.meta["suite"] == "scaled_chain" else cfg.critic_lr
    agent.embed_opt = AdamW(agent.embeddings.params, lr, weight_decay=0.0)
    return agent, row


def model_transfer_trainer(source, target_task: int, seed: int = 0, cfg: AgentConfig | None = None,
                           **trainer_kw) -> Trainer:
    """Single-task trainer on ``target_task`` starting from the pretrained weights."""
    ckpt = _as_checkpoint(source)
    agent, row = model_transfer_init(ckpt, target_task)
    cfg = AgentConfig.from_dict(ckpt.meta["agent_config"]) if cfg is None else cfg
    return Trainer(ckpt.meta["suite"], [target_task], cfg, seed=seed, n_goals=int(ckpt.meta.get("n_goals", 8)),
                   agent=agent, task_rows=[row], **trainer_kw)


# ---------------------------------------------------------------------------
# embedding tuning


class BudgetedEnv:
    """Counts environment steps and refuses to exceed the budget."""

    def __init__(self, env, budget: int):
        self.env = env
        self.budget = int(budget)
        self.steps = 0

    def reset(self, seed=None):
        return self.env.reset(seed)

    def step(self, action):
        if self.steps >= self.budget:
            raise RuntimeError(f"transition budget of {self.budget} exhausted")
        self.steps += 1
        return self.env.step(action)


def split_budget(budget: int, n: int) -> list[int]:
    """Even split; the remainder goes to the earliest candidates."""
    base, extra = divmod(int(budget), n)
    return [base + (1 if k < extra else 0) for k in range(n)]


def rollout_rewards(agent, env, row: int, steps: int) -> list[float]:
    """Deterministic policy conditioned on embedding ``row`` for ``steps`` transitions."""
    rewards = []
    obs = env.reset()
    for _ in range(steps):
        action = agent.act(obs[None, :], np.array([row]), deterministic=True)[0]
        obs, r, term, trunc = env.step(action)
        rewards.append(float(r))
        if term or trunc:
            obs = env.reset()
    return rewards


@dataclass
class SelectionResult:
    row: int
    embedding: np.ndarray
    consumed_steps: int
    statistics: list
    checksum_before: str
    checksum_after: str


def select_by_statistic(stats) -> int:
    """Index of the best candidate (first one on ties)."""
    return int(np.argmax(np.asarray(stats, dtype=np.float64)))


def embedding_tuning_select(source, target_task: int, budget: int = 300, mode: str = "few_shot",
                            rng=None, agent=None) -> SelectionResult:
    """Choose a pretrained embedding for ``target_task`` without updating anything.

    few_shot rolls out the frozen policy under every candidate embedding with
    the budget split evenly; candidates are ranked by mean per-step reward
    over their share times the task horizon (an episode-return estimate that
    stays comparable when a share is shorter than one episode).
    """
    ckpt = _as_checkpoint(source)
    check_split(ckpt, target_task)
    if mode not in ("zero_shot", "few_shot"):
        raise ValueError(f"unknown embedding-tuning mode {mode!r}")
    if not 1 <= budget <= MAX_BUDGET:
        raise ValueError(f"embedding-tuning budget must lie in 1..{MAX_BUDGET}, got {budget}")
    if agent is None:
        agent, _ = load_agent(ckpt)
    if agent.embeddings is None:
        raise ValueError("embedding tuning needs a checkpoint trained with task embeddings")
    n = len(source_tasks(ckpt))
    before = frozen_checksum(agent)
    rng = np.random.default_rng(0) if rng is None else rng
    if mode == "zero_shot":
        row = int(rng.integers(0, n))
        stats, consumed = [], 0
    else:
        if budget < n:
            raise ValueError(f"budget {budget} cannot evaluate each of the {n} candidate embeddings once")
        env = BudgetedEnv(make_env(ckpt.meta["suite"], target_task, int(ckpt.meta.get("n_goals", 8))), budget)
        horizon = getattr(env.env, "horizon", getattr(env.env, "max_steps", 1))
        stats = []
        for k, share in enumerate(split_budget(budget, n)):
            stats.append(float(np.mean(rollout_rewards(agent, env, k, share))) * horizon)
        row = select_by_statistic(stats)
        consumed = env.steps
    after = frozen_checksum(agent)
    return SelectionResult(row, agent.embeddings.matrix[row].copy(), consumed, stats, before, after)


# ---------------------------------------------------------------------------
# data transfer


def source_buffers(ckpt: Checkpoint, capacity: int | None = None) -> dict[int, ReplayBuffer]:
    """Replay buffers stored in the checkpoint, keyed by embedding row."""
    out = {}
    for row in ckpt.meta["buffer_rows"]:
        buf = ReplayBuffer.from_state_arrays(f"replay.{row}", ckpt.arrays)
        if buf.size == 0:
            raise ValueError(f"source replay buffer for row {row} is empty")
        if capacity is not None and capacity != buf.capacity:
            resized = ReplayBuffer(capacity, buf.obs.shape[1], buf.action.shape[1])
            for t in buf.transitions():
                resized.push(t)
            buf = resized
        out[int(row)] = buf
    if not out:
        raise ValueError("checkpoint holds no source replay buffers")
    return out


def data_transfer_seed(source, target_task: int, seed: int = 0, cfg: AgentConfig | None = None,
                       **trainer_kw) -> Trainer:
    """Fresh learner on ``target_task`` whose replay also holds the pretraining data.

    Source transitions keep their raw rewards and their source rows; the
    running return maxima for those rows are copied from the checkpoint so
    their rewards are normalized as they were during pretraining.
    """
    ckpt = _as_checkpoint(source)
    check_split(ckpt, target_task)
    _check_dims(ckpt, target_task)
    cfg = AgentConfig.from_dict(ckpt.meta["agent_config"]) if cfg is None else cfg
    suite = ckpt.meta["suite"]
    capacity = cfg.discrete_buffer_size if suite == "scaled_chain" else cfg.buffer_size
    extra = source_buffers(ckpt, capacity)
    row = int(ckpt.meta["num_rows"])
    trainer = Trainer(suite, [target_task], cfg, seed=seed, n_goals=int(ckpt.meta.get("n_goals", 8)),
                      task_rows=[row], extra_buffers=extra, **trainer_kw)
    gbar = ckpt.arrays["tracker.gbar"]
    trainer.agent.tracker.gbar[: len(gbar)] = gbar
    return trainer


def fresh_flag(protocol: str) -> bool:
    return protocol == "data"


__all__ = [
    "BudgetedEnv",
    "PROTOCOLS",
    "SelectionResult",
    "TransferConfig",
    "check_split",
    "data_transfer_seed",
    "embedding_tuning_select",
    "frozen_checksum",
    "load_agent",
    "model_transfer_init",
    "model_transfer_trainer",
    "select_by_statistic",
    "source_buffers",
    "split_budget",
]
