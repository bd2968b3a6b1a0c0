"""Toy multi-task suites.

ScaledChain: a 9-cell corridor with two actions and a terminal reward whose
size differs by orders of magnitude between tasks.

PointGoal: a damped 2-D point mass steered toward a goal on the unit circle.
Task ids ``0..K-1`` are training goals at angle ``2*pi*k/K``; ids ``K..2K-1``
are held-out goals halfway between them.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache

import numpy as np

CHAIN_SCALES = (1.0, 10.0, 100.0, 1000.0, 0.1)
SUITES = ("scaled_chain", "point_goal_dense", "point_goal_sparse")


class ScaledChain:
    discrete = True
    obs_dim = 1
    n_actions = 2
    action_dim = 1

    def __init__(self, scale: float, length: int = 9, max_steps: int = 50):
        self.scale = float(scale)
        self.length = length
        self.max_steps = max_steps
        self.pos = 0
        self.t = 0

    def _obs(self):
        return np.array([self.pos / (self.length - 1)])

    def reset(self, seed=None) -> np.ndarray:
        self.pos = 0
        self.t = 0
        return self._obs()

    def step(self, action):
        a = int(action)
        if a not in (0, 1):
            raise ValueError(f"ScaledChain action must be 0 (left) or 1 (right), got {action!r}")
        self.pos = min(self.pos + 1, self.length - 1) if a == 1 else max(self.pos - 1, 0)
        self.t += 1
        terminated = self.pos == self.length - 1
        reward = self.scale if terminated else 0.0
        truncated = (not terminated) and self.t >= self.max_steps
        return self._obs(), reward, terminated, truncated

    def optimal_return(self, discount: float) -> float:
        """Discounted return of always stepping right."""
        return self.scale * discount ** (self.length - 2)

    def get_state(self):
        return {"pos": self.pos, "t": self.t}

    def set_state(self, state):
        self.pos, self.t = int(state["pos"]), int(state["t"])


class PointGoal:
    discrete = False
    obs_dim = 4
    action_dim = 2

    def __init__(self, goal, scale: float = 1.0, sparse: bool = False, horizon: int = 100, radius: float = 0.1):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.scale = float(scale)
        self.sparse = sparse
        self.horizon = horizon
        self.radius = radius
        self.state = np.zeros(4)
        self.t = 0

    def reset(self, seed=None) -> np.ndarray:
        self.state = np.zeros(4)
        self.t = 0
        return self.state.copy()

    def reward_at(self, pos) -> float:
        dist = float(np.linalg.norm(pos - self.goal))
        if self.sparse:
            return self.scale * float(dist < self.radius)
        return -self.scale * dist

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.shape != (2,) or not np.all(np.isfinite(a)):
            raise ValueError(f"PointGoal action must be a finite 2-vector, got {action!r}")
        v = 0.95 * self.state[2:] + 0.1 * a
        p = self.state[:2] + 0.1 * v
        self.state = np.concatenate([p, v])
        self.t += 1
        return self.state.copy(), self.reward_at(p), False, self.t >= self.horizon

    def get_state(self):
        return {"state": self.state.tolist(), "t": self.t}

    def set_state(self, state):
        self.state = np.array(state["state"], dtype=np.float64)
        self.t = int(state["t"])


def point_goal_angle(task_id: int, n_goals: int) -> float:
    if not 0 <= task_id < 2 * n_goals:
        raise ValueError(f"PointGoal task id {task_id} outside 0..{2 * n_goals - 1}")
    k = task_id % n_goals
    offset = math.pi / n_goals if task_id >= n_goals else 0.0
    return 2.0 * math.pi * k / n_goals + offset


def make_env(suite: str, task_id: int, n_goals: int = 8):
    if suite == "scaled_chain":
        if not 0 <= task_id < len(CHAIN_SCALES):
            raise ValueError(f"ScaledChain task id {task_id} outside 0..{len(CHAIN_SCALES) - 1}")
        return ScaledChain(CHAIN_SCALES[task_id])
    if suite in ("point_goal_dense", "point_goal_sparse"):
        angle = point_goal_angle(task_id, n_goals)
        scale = 1.0 if task_id % 2 == 0 else 10.0
        return PointGoal((math.cos(angle), math.sin(angle)), scale, sparse=suite.endswith("sparse"))
    raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")


class Suite:
    """One environment per task, addressed by position in ``task_ids``."""

    def __init__(self, name: str, task_ids, n_goals: int = 8, log_path=None):
        self.name = name
        self.task_ids = [int(t) for t in task_ids]
        if not self.task_ids:
            raise ValueError("a suite needs at least one task")
        self.n_goals = n_goals
        self.envs = [make_env(name, t, n_goals) for t in self.task_ids]
        self.discrete = self.envs[0].discrete
        self.obs_dim = self.envs[0].obs_dim
        self.action_dim = self.envs[0].action_dim
        self.n_actions = getattr(self.envs[0], "n_actions", 0)
        self._log = open(log_path, "a") if log_path else None

    def __len__(self):
        return len(self.envs)

    def _env(self, task):
        if not 0 <= int(task) < len(self.envs):
            raise IndexError(f"task index {task} out of range for a suite of {len(self.envs)} tasks")
        return self.envs[int(task)]

    def reset(self, task, seed=None) -> np.ndarray:
        return self._env(task).reset(seed)

    def step(self, task, action):
        env = self._env(task)
        out = env.step(action)
        if self._log is not None:
            rec = {"task": self.task_ids[int(task)], "step": env.t, "reward": out[1],
                   "terminated": bool(out[2]), "truncated": bool(out[3])}
            self._log.write(json.dumps(rec) + "\n")
        return out

    def close(self):
        if self._log is not None:
            self._log.close()
            self._log = None

    def get_states(self):
        return [env.get_state() for env in self.envs]

    def set_states(self, states):
        for env, s in zip(self.envs, states):
            env.set_state(s)


# ---------------------------------------------------------------------------
# score anchors


def rollout_return(env, policy, discount: float = 1.0) -> float:
    obs = env.reset()
    total, w = 0.0, 1.0
    while True:
        obs, r, term, trunc = env.step(policy(obs))
        total += w * r
        w *= discount
        if term or trunc:
            return total


def pd_controller(goal, kp: float, kd: float):
    goal = np.asarray(goal, dtype=np.float64)

    def policy(obs):
        return np.clip(kp * (goal - obs[:2]) - kd * obs[2:], -1.0, 1.0)

    return policy


PD_GAINS = tuple((kp, kd) for kp in (1.0, 2.0, 5.0, 10.0, 20.0, 50.0) for kd in (0.0, 1.0, 2.0, 5.0, 10.0, 20.0))


@lru_cache(maxsize=None)
def score_anchors(suite: str, task_id: int, discount: float = 0.99, n_goals: int = 8,
                  n_random: int = 10, seed: int = 0) -> tuple[float, float]:
    """``(random, reference)`` returns for one task.

    ScaledChain scores discounted returns; the reference is the closed-form
    optimum. PointGoal scores undiscounted returns; the reference is the best
    scripted PD controller over a fixed gain grid.
    """
    env = make_env(suite, task_id, n_goals)
    rng = np.random.default_rng(seed)
    if env.discrete:
        rand = np.mean([rollout_return(env, lambda o: int(rng.integers(2)), discount) for _ in range(n_random)])
        return float(rand), env.optimal_return(discount)
    rand = np.mean([rollout_return(env, lambda o: rng.uniform(-1, 1, 2)) for _ in range(n_random)])
    best = max(rollout_return(env, pd_controller(env.goal, kp, kd)) for kp, kd in PD_GAINS)
    return float(rand), float(best)
