"""Epsilon-greedy agent with n-step categorical (or scalar) TD targets."""

from __future__ import annotations

import numpy as np

from brclab.agents.common import clone_bronet, per_task_mean, polyak_update
from brclab.agents.config import AgentConfig
from brclab.agents.sac import _softmax, trained_rows
from brclab.autodiff import AdamW, BroNet, GradTape, Tensor, ops
from brclab.distributional import bellman_shift, make_support, project
from brclab.embeddings import TaskEmbeddingTable
from brclab.experience.replay import Batch
from brclab.retnorm import ReturnTracker


class DiscreteAgent:
    """One online critic and its Polyak target; no entropy term."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, n_actions: int, num_tasks: int, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim, self.n_actions, self.num_tasks = obs_dim, n_actions, num_tasks
        self.rng = rng
        self.support = make_support(cfg.v_min, cfg.v_max, cfg.n_atoms)
        self.atoms = self.support.atoms
        self.categorical = cfg.loss == "ce"
        self.out_per_action = cfg.n_atoms if self.categorical else 1
        heads = 1 if cfg.task_embeddings else num_tasks
        emb_dim = cfg.embedding_dim if cfg.task_embeddings else 0
        self.embeddings = TaskEmbeddingTable(num_tasks, cfg.embedding_dim, rng) if cfg.task_embeddings else None
        self.critic = BroNet(obs_dim + emb_dim, cfg.critic_width, cfg.critic_depth,
                             n_actions * self.out_per_action, rng, n_heads=heads, name="critic")
        self.target = clone_bronet(self.critic)
        self.critic_opt = AdamW(self.critic.params, cfg.discrete_lr, weight_decay=cfg.weight_decay)
        self.embed_opt = (AdamW(self.embeddings.params, cfg.discrete_lr, weight_decay=0.0)
                          if self.embeddings is not None else None)
        self.tracker = ReturnTracker(num_tasks, cfg.v_max, cfg.discount, 0.0, use_entropy=False)
        self.updates = 0
        self.env_steps = 0

    def _heads(self, tasks):
        return None if self.embeddings is not None else np.asarray(tasks, dtype=np.int64)

    def _input(self, obs, tasks, differentiable=False):
        if self.embeddings is None:
            return np.asarray(obs, dtype=np.float64)
        if differentiable:
            return ops.concat([Tensor(obs), self.embeddings.lookup(tasks)], axis=-1)
        return np.concatenate([obs, self.embeddings.lookup_const(tasks)], axis=-1)

    def _outputs(self, net, x, tasks):
        out = net(x, heads=self._heads(tasks))
        return ops.reshape(out, (out.shape[0], self.n_actions, self.out_per_action))

    def action_values(self, obs, tasks, net=None) -> np.ndarray:
        """[B, A] expected values (normalized units)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        tasks = np.atleast_1d(np.asarray(tasks, dtype=np.int64))
        out = self._outputs(net or self.critic, self._input(obs, tasks), tasks).data
        if self.categorical:
            return _softmax(out) @ self.atoms
        return out[..., 0]

    def act(self, obs, tasks, deterministic=False, epsilon=None) -> np.ndarray:
        values = self.action_values(obs, tasks)
        greedy = np.argmax(values, axis=1)
        if deterministic:
            return greedy
        eps = self.cfg.epsilon(self.env_steps) if epsilon is None else epsilon
        explore = self.rng.random(greedy.shape[0]) < eps
        random_actions = self.rng.integers(0, self.n_actions, size=greedy.shape[0])
        return np.where(explore, random_actions, greedy)

    def normalized_rewards(self, batch: Batch) -> np.ndarray:
        if not self.cfg.normalize_returns:
            return batch.reward.copy()
        return self.tracker.normalize_batch(batch.tasks, batch.reward)

    def critic_target(self, batch: Batch):
        r = self.normalized_rewards(batch)
        base = batch.discount if batch.discount is not None else np.full(len(batch), self.cfg.discount)
        discount = base * (1.0 - batch.terminated.astype(np.float64))
        out = self._outputs(self.target, self._input(batch.next_obs, batch.tasks), batch.tasks).data
        rows = np.arange(len(batch))
        if not self.categorical:
            return r + discount * out[..., 0].max(axis=1)
        probs = _softmax(out)
        best = np.argmax(probs @ self.atoms, axis=1)
        shifted = bellman_shift(r, discount, np.zeros(len(batch)), self.support)
        return project(shifted, probs[rows, best], self.support).probs

    def _per_sample_loss(self, batch, target, differentiable):
        x = self._input(batch.obs, batch.tasks, differentiable=differentiable)
        out = ops.select(self._outputs(self.critic, x, batch.tasks), batch.action[:, 0].astype(np.int64))
        if self.categorical:
            return ops.sum(ops.mul(ops.log_softmax(out), -target), axis=-1)
        return ops.square(ops.sub(ops.reshape(out, (len(batch),)), target))

    def critic_update(self, batch: Batch) -> np.ndarray:
        target = self.critic_target(batch)
        tape = GradTape()
        with tape:
            per_sample = self._per_sample_loss(batch, target, self.embeddings is not None)
            loss = ops.mean(per_sample)
        if not np.isfinite(loss.data):
            raise FloatingPointError(
                f"non-finite critic loss: reward range [{batch.reward.min()}, {batch.reward.max()}], "
                f"tasks {np.unique(batch.tasks).tolist()}"
            )
        tape.backward(loss)
        self.critic_opt.step()
        if self.embeddings is not None:
            self.embed_opt.step()
            self.embeddings.l1_project(trained_rows(self.embed_opt))
        return per_task_mean(per_sample.data, batch.tasks, self.num_tasks)

    def task_gradients(self, batch: Batch) -> dict[int, np.ndarray]:
        target = self.critic_target(batch)
        shared = [self.critic.params[n] for n in self.critic.shared_names()]
        tape = GradTape()
        with tape:
            per_sample = self._per_sample_loss(batch, target, False)
            task_losses = {}
            for k in np.unique(batch.tasks):
                mask = (batch.tasks == k).astype(np.float64)
                task_losses[int(k)] = ops.sum(ops.mul(per_sample, mask / mask.sum()))
        saved = {n: t._grad for n, t in self.critic.params.items()}
        grads = {}
        for k, loss in task_losses.items():
            self.critic.params.zero_grad()
            tape.backward(loss)
            grads[k] = np.concatenate([t.grad.ravel() for t in shared])
        for n, t in self.critic.params.items():
            t._grad = saved[n]
        return grads

    def update(self, batch: Batch) -> dict:
        losses = self.critic_update(batch)
        self.updates += 1
        if self.updates % self.cfg.target_update_every == 0:
            polyak_update(self.critic.params, self.target.params, self.cfg.tau)
        return {"critic_loss": losses}

    def state_arrays(self) -> dict:
        out = {f"critic.{n}": t.data for n, t in self.critic.params.items()}
        out.update({f"target.{n}": t.data for n, t in self.target.params.items()})
        out.update(self.critic_opt.state_arrays("opt.critic"))
        if self.embeddings is not None:
            out["embeddings"] = self.embeddings.matrix
            out.update(self.embed_opt.state_arrays("opt.embeddings"))
        out.update(self.tracker.state_arrays())
        out["agent.updates"] = np.array([self.updates, self.env_steps], dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict, optimizer=True):
        for prefix, ps in (("critic", self.critic.params), ("target", self.target.params)):
            for n, t in ps.items():
                src = arrays[f"{prefix}.{n}"]
                if src.shape != t.data.shape:
                    raise ValueError(f"checkpoint tensor {prefix}.{n} has shape {src.shape}, expected {t.data.shape}")
                t.data[...] = src
        if self.embeddings is not None:
            self.embeddings.weight.data[...] = arrays["embeddings"]
        if optimizer:
            self.critic_opt.load_state_arrays("opt.critic", arrays)
            if self.embeddings is not None:
                self.embed_opt.load_state_arrays("opt.embeddings", arrays)
            self.tracker.load_state_arrays(arrays)
            self.updates, self.env_steps = (int(v) for v in arrays["agent.updates"])
