"""Continuous-control agent: categorical critics, tanh-Gaussian actor, auto-tuned temperature."""

from __future__ import annotations

import math

import numpy as np

from brclab.agents.common import clone_bronet, global_norm, merged, per_task_mean, polyak_update
from brclab.agents.config import AgentConfig
from brclab.autodiff import AdamW, BroNet, GradTape, ParameterSet, TanhGaussianActor, Tensor, ops
from brclab.distributional import bellman_shift, make_support, project
from brclab.embeddings import TaskEmbeddingTable
from brclab.experience.replay import Batch
from brclab.retnorm import ReturnTracker


class SACAgent:
    """Two online critics, two Polyak targets, one actor, one temperature.

    Critic targets average the two target critics (as a mixture of
    distributions for the categorical loss, as a mean for the scalar one);
    there is no minimum over critics.
    """

    def __init__(self, cfg: AgentConfig, obs_dim: int, action_dim: int, num_tasks: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim, self.action_dim, self.num_tasks = obs_dim, action_dim, num_tasks
        self.rng = rng
        self.support = make_support(cfg.v_min, cfg.v_max, cfg.n_atoms)
        self.atoms = self.support.atoms
        self.categorical = cfg.loss == "ce"
        self.target_entropy = cfg.entropy_target(action_dim)
        heads = 1 if cfg.task_embeddings else num_tasks
        emb_dim = cfg.embedding_dim if cfg.task_embeddings else 0
        out_dim = cfg.n_atoms if self.categorical else 1

        self.embeddings = TaskEmbeddingTable(num_tasks, cfg.embedding_dim, rng) if cfg.task_embeddings else None
        self.critics = [BroNet(obs_dim + emb_dim + action_dim, cfg.critic_width, cfg.critic_depth, out_dim, rng,
                               n_heads=heads, name=f"critic{i}") for i in range(cfg.num_critics)]
        self.targets = [clone_bronet(c) for c in self.critics]
        self.actor = TanhGaussianActor(obs_dim + emb_dim, cfg.actor_width, cfg.actor_depth, action_dim, rng,
                                       n_heads=heads)
        self.log_alpha = Tensor(np.array(math.log(cfg.init_alpha)), requires_grad=True)

        self.critic_params = merged((f"critic{i}", c.params) for i, c in enumerate(self.critics))
        self.target_params = merged((f"critic{i}", t.params) for i, t in enumerate(self.targets))
        self.alpha_params = ParameterSet([("log_alpha", self.log_alpha)])
        self.critic_opt = AdamW(self.critic_params, cfg.critic_lr, weight_decay=cfg.weight_decay)
        self.actor_opt = AdamW(self.actor.params, cfg.actor_lr, weight_decay=cfg.weight_decay)
        self.alpha_opt = AdamW(self.alpha_params, cfg.temperature_lr, weight_decay=0.0)
        self.embed_opt = (AdamW(self.embeddings.params, cfg.critic_lr, weight_decay=0.0)
                          if self.embeddings is not None else None)
        self.tracker = ReturnTracker(num_tasks, cfg.v_max, cfg.discount, cfg.init_alpha,
                                     entropy_decay=cfg.entropy_ema, use_entropy=True)
        self.updates = 0

    # ------------------------------------------------------------------ helpers

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def _heads(self, tasks):
        return None if self.embeddings is not None else np.asarray(tasks, dtype=np.int64)

    def policy_input(self, obs, tasks, differentiable=False):
        """Observation, plus the task embedding when embeddings are on."""
        if self.embeddings is None:
            return np.asarray(obs, dtype=np.float64)
        if differentiable:
            return ops.concat([Tensor(obs), self.embeddings.lookup(tasks)], axis=-1)
        return np.concatenate([obs, self.embeddings.lookup_const(tasks)], axis=-1)

    def critic_values(self, net: BroNet, x, action, tasks):
        """Logits (categorical) or [B, 1] scalar values for one critic."""
        xa = ops.concat([x, action], axis=-1) if isinstance(x, Tensor) or isinstance(action, Tensor) \
            else np.concatenate([x, action], axis=-1)
        return net(xa, heads=self._heads(tasks))

    def _readout(self, out: Tensor) -> Tensor:
        """[B] expected value of a critic output, differentiable."""
        if self.categorical:
            return ops.reshape(ops.matmul(ops.softmax(out), self.atoms[:, None]), (out.shape[0],))
        return ops.reshape(out, (out.shape[0],))

    def q_value(self, obs, action, tasks) -> np.ndarray:
        """Mean over online critics of the expected value (normalized units)."""
        x = self.policy_input(obs, tasks)
        vals = [self._readout(self.critic_values(c, x, action, tasks)).data for c in self.critics]
        return np.mean(vals, axis=0)

    # ------------------------------------------------------------------ acting

    def act(self, obs, tasks, deterministic=False) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        tasks = np.atleast_1d(np.asarray(tasks, dtype=np.int64))
        x = self.policy_input(obs, tasks)
        if deterministic:
            return self.actor.deterministic(x, heads=self._heads(tasks)).data
        noise = self.rng.standard_normal((obs.shape[0], self.action_dim))
        action, _ = self.actor(x, noise, heads=self._heads(tasks))
        return action.data

    # ------------------------------------------------------------------ critic

    def normalized_rewards(self, batch: Batch) -> np.ndarray:
        if not self.cfg.normalize_returns:
            return batch.reward.copy()
        return self.tracker.normalize_batch(batch.tasks, batch.reward)

    def critic_target(self, batch: Batch):
        """Gradient-free TD target: [B, n_atoms] distribution, or [B] scalar."""
        r = self.normalized_rewards(batch)
        x_next = self.policy_input(batch.next_obs, batch.tasks)
        noise = self.rng.standard_normal((len(batch), self.action_dim))
        a_next, logp_next = self.actor(x_next, noise, heads=self._heads(batch.tasks))
        discount = self.cfg.discount * (1.0 - batch.terminated.astype(np.float64))
        bonus = -self.alpha * logp_next.data
        outs = [self.critic_values(t, x_next, a_next.data, batch.tasks).data for t in self.targets]
        if not self.categorical:
            v_next = np.mean([o[:, 0] for o in outs], axis=0)
            return r + discount * (v_next + bonus)
        mix = np.mean([_softmax(o) for o in outs], axis=0)
        shifted = bellman_shift(r, discount, bonus, self.support)
        return project(shifted, mix, self.support).probs

    def _critic_losses(self, batch: Batch, target, tape: GradTape):
        """Per-sample loss Tensors (one per critic), recorded on ``tape``."""
        with tape:
            x = self.policy_input(batch.obs, batch.tasks, differentiable=self.embeddings is not None)
            losses = []
            for c in self.critics:
                out = self.critic_values(c, x, batch.action, batch.tasks)
                if self.categorical:
                    losses.append(ops.sum(ops.mul(ops.log_softmax(out), -target), axis=-1))
                else:
                    losses.append(ops.square(ops.sub(ops.reshape(out, (len(batch),)), target)))
        return losses

    def critic_update(self, batch: Batch) -> np.ndarray:
        """One optimizer step on both critics and the embedding table.

        Returns the per-task mean loss of the first critic (nan for tasks absent from the batch).
        """
        target = self.critic_target(batch)
        tape = GradTape()
        per_sample = self._critic_losses(batch, target, tape)
        with tape:
            total = ops.mean(per_sample[0])
            for extra in per_sample[1:]:
                total = ops.add(total, ops.mean(extra))
        if not np.isfinite(total.data):
            raise FloatingPointError(
                f"non-finite critic loss: reward range [{batch.reward.min()}, {batch.reward.max()}], "
                f"tasks {np.unique(batch.tasks).tolist()}, alpha {self.alpha}"
            )
        tape.backward(total)
        self.critic_opt.step()
        if self.embeddings is not None:
            self.embed_opt.step()
            # rows never sampled have zero moments and stay bit-exact; every
            # other row may have moved through momentum
            self.embeddings.l1_project(trained_rows(self.embed_opt))
        return per_task_mean(per_sample[0].data, batch.tasks, self.num_tasks)

    def task_gradients(self, batch: Batch, critic_index: int = 0) -> dict[int, np.ndarray]:
        """Flat TD-loss gradient on the shared critic parameters, per task in the batch."""
        target = self.critic_target(batch)
        critic = self.critics[critic_index]
        shared = [critic.params[n] for n in critic.shared_names()]
        tape = GradTape()
        with tape:
            x = self.policy_input(batch.obs, batch.tasks)
            out = self.critic_values(critic, x, batch.action, batch.tasks)
            if self.categorical:
                per_sample = ops.sum(ops.mul(ops.log_softmax(out), -target), axis=-1)
            else:
                per_sample = ops.square(ops.sub(ops.reshape(out, (len(batch),)), target))
            task_losses = {}
            for k in np.unique(batch.tasks):
                mask = (batch.tasks == k).astype(np.float64)
                task_losses[int(k)] = ops.sum(ops.mul(per_sample, mask / mask.sum()))
        grads = {}
        saved = {n: t._grad for n, t in critic.params.items()}
        for k, loss in task_losses.items():
            critic.params.zero_grad()
            tape.backward(loss)
            grads[k] = np.concatenate([t.grad.ravel() for t in shared])
        for n, t in critic.params.items():
            t._grad = saved[n]
        return grads

    # ------------------------------------------------------------------ actor and temperature

    def actor_update(self, batch: Batch) -> dict:
        """Minimise ``alpha * log pi - Q`` with the critics held fixed."""
        x = self.policy_input(batch.obs, batch.tasks)  # embeddings are constants here
        noise = self.rng.standard_normal((len(batch), self.action_dim))
        alpha = self.alpha
        tape = GradTape()
        with self.critic_params.frozen():
            with tape:
                action, logp = self.actor(x, noise, heads=self._heads(batch.tasks))
                q = None
                for c in self.critics:
                    v = self._readout(self.critic_values(c, x, action, batch.tasks))
                    q = v if q is None else ops.add(q, v)
                q = ops.mul(q, 1.0 / len(self.critics))
                loss = ops.mean(ops.sub(ops.mul(logp, alpha), q))
            tape.backward(loss)
        self.actor_opt.step()
        entropy = per_task_mean(-logp.data, batch.tasks, self.num_tasks)
        for k in np.unique(batch.tasks):
            self.tracker.observe_entropy(int(k), float(entropy[k]))
        return {"loss": float(loss.data), "log_prob": logp.data, "entropy": entropy}

    def temperature_update(self, log_prob: np.ndarray) -> float:
        """Gradient step on ``log alpha`` for ``E[-log alpha * (log pi + target)]``."""
        self.log_alpha.grad = np.array(-(float(np.mean(log_prob)) + self.target_entropy))
        self.alpha_opt.step()
        self.tracker.alpha = self.alpha
        return self.alpha

    def update(self, batch: Batch) -> dict:
        losses = self.critic_update(batch)
        actor = self.actor_update(batch)
        self.temperature_update(actor["log_prob"])
        self.updates += 1
        if self.updates % self.cfg.target_update_every == 0:
            polyak_update(self.critic_params, self.target_params, self.cfg.tau)
        return {"critic_loss": losses, "actor_loss": actor["loss"], "entropy": actor["entropy"]}

    # ------------------------------------------------------------------ persistence

    def state_arrays(self) -> dict:
        out = {}
        for prefix, ps in (("critic", self.critic_params), ("target", self.target_params),
                           ("actor", self.actor.params), ("temperature", self.alpha_params)):
            for name, t in ps.items():
                out[f"{prefix}.{name}"] = t.data
        out.update(self.critic_opt.state_arrays("opt.critic"))
        out.update(self.actor_opt.state_arrays("opt.actor"))
        out.update(self.alpha_opt.state_arrays("opt.temperature"))
        if self.embeddings is not None:
            out["embeddings"] = self.embeddings.matrix
            out.update(self.embed_opt.state_arrays("opt.embeddings"))
        out.update(self.tracker.state_arrays())
        out["agent.updates"] = np.array([self.updates], dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict, optimizer=True):
        for prefix, ps in (("critic", self.critic_params), ("target", self.target_params),
                           ("actor", self.actor.params), ("temperature", self.alpha_params)):
            for name, t in ps.items():
                src = arrays[f"{prefix}.{name}"]
                if src.shape != t.data.shape:
                    raise ValueError(f"checkpoint tensor {prefix}.{name} has shape {src.shape}, "
                                     f"expected {t.data.shape}")
                t.data[...] = src
        if self.embeddings is not None:
            self.embeddings.weight.data[...] = arrays["embeddings"]
        if optimizer:
            self.critic_opt.load_state_arrays("opt.critic", arrays)
            self.actor_opt.load_state_arrays("opt.actor", arrays)
            self.alpha_opt.load_state_arrays("opt.temperature", arrays)
            if self.embeddings is not None:
                self.embed_opt.load_state_arrays("opt.embeddings", arrays)
            self.tracker.load_state_arrays(arrays)
            self.updates = int(arrays["agent.updates"][0])


def trained_rows(opt: AdamW) -> np.ndarray:
    return np.nonzero(np.any(opt.m["embeddings"] != 0.0, axis=1))[0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)
