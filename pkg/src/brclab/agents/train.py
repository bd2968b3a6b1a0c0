"""Multi-task training loop at a fixed update-to-data ratio.

Each iteration steps every task's environment once, then performs ``utd``
gradient updates on one mixed-task batch each. Gradient steps therefore equal
iterations times ``utd`` whatever the number of tasks.
"""

from __future__ import annotations

import numpy as np

from brclab.agents.config import AgentConfig
from brclab.agents.discrete import DiscreteAgent
from brclab.agents.sac import SACAgent
from brclab.diagnostics import MetricRecord, grad_conflict_rate, normalized_score
from brclab.experience.envs import Suite, make_env, score_anchors
from brclab.experience.replay import ReplayBuffer, Transition, sample_multitask
from brclab.retnorm import episode_returns


def make_agent(cfg: AgentConfig, suite: Suite, rng: np.random.Generator, num_tasks=None):
    k = len(suite) if num_tasks is None else num_tasks
    if suite.discrete:
        return DiscreteAgent(cfg, suite.obs_dim, suite.n_actions, k, rng)
    return SACAgent(cfg, suite.obs_dim, suite.action_dim, k, rng)


class Trainer:
    """Owns the suite, agent, buffers, rng and metric stream of one run.

    ``task_rows`` maps each suite task to its embedding/tracker row (defaults
    to ``0..K-1``); ``extra_buffers`` are replay buffers for rows that are
    sampled from but not collected into (used by data transfer).
    """

    def __init__(self, suite_name: str, task_ids, cfg: AgentConfig, seed: int = 0, n_goals: int = 8,
                 eval_interval: int = 0, diag_interval: int = 0, agent=None, task_rows=None,
                 extra_buffers=None, episode_log=None, sink=None):
        self.cfg = cfg
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.suite = Suite(suite_name, task_ids, n_goals, log_path=episode_log)
        self.eval_interval = eval_interval
        self.diag_interval = diag_interval
        self.task_rows = list(range(len(self.suite))) if task_rows is None else [int(r) for r in task_rows]
        extra = dict(extra_buffers or {})
        n_rows = max(self.task_rows + list(extra) + [-1]) + 1
        self.agent = agent if agent is not None else make_agent(cfg, self.suite, self.rng, n_rows)
        if agent is not None:
            self.agent.rng = self.rng
        act_dim = 1 if self.suite.discrete else self.suite.action_dim
        capacity = cfg.discrete_buffer_size if self.suite.discrete else cfg.buffer_size
        self.buffers = {row: ReplayBuffer(capacity, self.suite.obs_dim, act_dim) for row in self.task_rows}
        self.buffers.update(extra)
        self.buffer_rows = sorted(self.buffers)
        self.batch_size = (cfg.discrete_batch_size if self.suite.discrete else cfg.batch_size)
        if len(self.task_rows) > 1:
            self.batch_size *= cfg.multitask_batch_factor
        self.score_discount = cfg.discount if self.suite.discrete else 1.0
        self.anchors = [score_anchors(suite_name, t, cfg.discount, n_goals) for t in self.suite.task_ids]
        self.obs = [self.suite.reset(k, self.seed) for k in range(len(self.suite))]
        self.episode_rewards = [[] for _ in range(len(self.suite))]
        self.iteration = 0
        self.records: list[MetricRecord] = []
        self.sink = sink
        self._reset_accumulators()

    # ------------------------------------------------------------------ metrics

    def _reset_accumulators(self):
        n = len(self.suite)
        self.acc = {"loss_sum": [0.0] * n, "loss_count": [0] * n, "entropy_sum": [0.0] * n,
                    "entropy_count": [0] * n}

    def emit(self, task: int, name: str, value: float, step=None):
        rec = MetricRecord(self.iteration if step is None else step, int(task), name, float(value), self.seed)
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)

    # ------------------------------------------------------------------ loop

    def _collect(self):
        n = len(self.suite)
        obs = np.stack(self.obs)
        rows = np.array(self.task_rows)
        if self.suite.discrete:
            actions = self.agent.act(obs, rows)
            self.agent.env_steps += 1
        elif self.iteration < self.cfg.random_steps:
            actions = self.rng.uniform(-1.0, 1.0, size=(n, self.suite.action_dim))
        else:
            actions = self.agent.act(obs, rows)
        for k in range(n):
            a = actions[k]
            nxt, r, term, trunc = self.suite.step(k, a)
            self.buffers[self.task_rows[k]].push(Transition(self.obs[k], np.atleast_1d(a), r, nxt, term, trunc))
            self.episode_rewards[k].append(r)
            if term or trunc:
                self._end_episode(k, trunc)
                nxt = self.suite.reset(k, self.seed)
            self.obs[k] = nxt

    def _end_episode(self, k: int, truncated: bool):
        rewards = np.array(self.episode_rewards[k])
        # truncated episodes bootstrap from 0: an early critic estimate would
        # otherwise enter the running maximum permanently
        returns = episode_returns(rewards, self.cfg.discount, truncated, 0.0)
        self.agent.tracker.update_gbar(self.task_rows[k], returns)
        self.emit(self.suite.task_ids[k], "train_return", float(rewards.sum()))
        self.episode_rewards[k] = []

    def _update(self):
        n_step = self.cfg.n_step if self.suite.discrete else 1
        for _ in range(self.cfg.utd):
            batch = sample_multitask([self.buffers[r] for r in self.buffer_rows], self.batch_size, self.rng,
                                     n_step=n_step, discount=self.cfg.discount, task_rows=self.buffer_rows)
            info = self.agent.update(batch)
            for k, row in enumerate(self.task_rows):
                loss = info["critic_loss"][row]
                if np.isfinite(loss):
                    self.acc["loss_sum"][k] += float(loss)
                    self.acc["loss_count"][k] += 1
                if "entropy" in info and np.isfinite(info["entropy"][row]):
                    self.acc["entropy_sum"][k] += float(info["entropy"][row])
                    self.acc["entropy_count"][k] += 1
            if self.diag_interval and self.agent.updates % self.diag_interval == 0:
                self._diagnose(batch)

    def _diagnose(self, batch):
        grads = self.agent.task_gradients(batch)
        row_to_task = {row: self.suite.task_ids[k] for k, row in enumerate(self.task_rows)}
        for row, g in sorted(grads.items()):
            if row in row_to_task:
                self.emit(row_to_task[row], "grad_norm", float(np.linalg.norm(g)))
        if len(grads) >= 2:
            res = grad_conflict_rate([grads[r] for r in sorted(grads)])
            if res.pairs:
                self.emit(-1, "conflict_rate", res.rate)

    def step(self):
        self._collect()
        self.iteration += 1
        self._update()
        if self.eval_interval and self.iteration % self.eval_interval == 0:
            self.evaluate_and_log()

    def run(self, iterations: int):
        for _ in range(iterations):
            self.step()
        return self

    # ------------------------------------------------------------------ evaluation

    def evaluate(self, task_rows=None, task_ids=None) -> np.ndarray:
        """Deterministic-policy return per task (fresh environments, lockstep)."""
        task_ids = self.suite.task_ids if task_ids is None else task_ids
        task_rows = self.task_rows if task_rows is None else task_rows
        return evaluate_policy(self.agent, self.suite.name, task_ids, task_rows, self.suite.n_goals,
                               self.score_discount)

    def scores(self, returns) -> np.ndarray:
        return np.array([normalized_score(r, a[0], a[1]) for r, a in zip(returns, self.anchors)])

    def evaluate_and_log(self):
        returns = self.evaluate()
        scores = self.scores(returns)
        for k, task in enumerate(self.suite.task_ids):
            self.emit(task, "return", returns[k])
            self.emit(task, "score", scores[k])
            row = self.task_rows[k]
            if self.acc["loss_count"][k]:
                self.emit(task, "td_loss", self.acc["loss_sum"][k] / self.acc["loss_count"][k])
            if self.acc["entropy_count"][k]:
                self.emit(task, "entropy", self.acc["entropy_sum"][k] / self.acc["entropy_count"][k])
            self.emit(task, "gbar", self.agent.tracker.gbar[row])
            self.emit(task, "lambda", self.agent.tracker.entropy_correction(row))
        self.emit(-1, "mean_score", float(np.mean(scores)))
        if hasattr(self.agent, "alpha"):
            self.emit(-1, "alpha", self.agent.alpha)
        self._reset_accumulators()
        return scores

    # ------------------------------------------------------------------ persistence

    def state(self):
        """``(meta, arrays)``: JSON-safe metadata and named float64 tensors."""
        arrays = dict(self.agent.state_arrays())
        for row, buf in self.buffers.items():
            arrays.update(buf.state_arrays(f"replay.{row}"))
        meta = {
            "iteration": self.iteration,
            "seed": self.seed,
            "rng": self.rng.bit_generator.state,
            "env_states": self.suite.get_states(),
            "obs": [o.tolist() for o in self.obs],
            "episode_rewards": self.episode_rewards,
            "acc": self.acc,
            "task_rows": self.task_rows,
            "buffer_rows": self.buffer_rows,
        }
        return meta, arrays

    def restore(self, meta: dict, arrays: dict):
        self.agent.load_state_arrays(arrays)
        self.buffers = {int(row): ReplayBuffer.from_state_arrays(f"replay.{row}", arrays)
                        for row in meta["buffer_rows"]}
        self.buffer_rows = sorted(self.buffers)
        self.iteration = int(meta["iteration"])
        self.rng.bit_generator.state = meta["rng"]
        self.suite.set_states(meta["env_states"])
        self.obs = [np.array(o, dtype=np.float64) for o in meta["obs"]]
        self.episode_rewards = [list(map(float, e)) for e in meta["episode_rewards"]]
        self.acc = meta["acc"]
        self.task_rows = [int(r) for r in meta["task_rows"]]


def evaluate_policy(agent, suite_name, task_ids, task_rows, n_goals=8, discount=1.0) -> np.ndarray:
    """One deterministic episode per task, all tasks stepped together."""
    envs = [make_env(suite_name, t, n_goals) for t in task_ids]
    obs = [e.reset() for e in envs]
    totals = np.zeros(len(envs))
    weight = np.ones(len(envs))
    live = list(range(len(envs)))
    rows = np.asarray(task_rows, dtype=np.int64)
    while live:
        actions = agent.act(np.stack([obs[k] for k in live]), rows[live], deterministic=True)
        still = []
        for a, k in zip(actions, live):
            o, r, term, trunc = envs[k].step(a)
            totals[k] += weight[k] * r
            weight[k] *= discount
            obs[k] = o
            if not (term or trunc):
                still.append(k)
        live = still
    return totals


def train(cfg: AgentConfig, suite_name: str, task_ids, iterations: int, seed: int = 0, **kwargs) -> Trainer:
    """Build a :class:`Trainer` and run it for ``iterations`` environment iterations."""
    return Trainer(suite_name, task_ids, cfg, seed, **kwargs).run(iterations)
