"""Per-task return normalization.

Each task keeps the largest absolute Monte-Carlo return seen so far (``gbar``)
and an entropy correction ``lam = alpha * H / (1 - gamma)``. Rewards are scaled
by ``v_max / (gbar + lam)`` when a batch is sampled, so the replay buffer
always stores raw rewards.
"""

from __future__ import annotations

import numpy as np

from brclab import kernels

DENOM_FLOOR = 1e-6


def episode_returns(rewards, discount: float, truncated: bool = False, bootstrap_value: float = 0.0) -> np.ndarray:
    """Discounted return from every step of one episode.

    A truncated episode adds ``discount**(T-t) * bootstrap_value`` to step t.
    """
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("episode_returns needs a non-empty 1-D reward sequence")
    tail = float(bootstrap_value) if truncated else 0.0
    return kernels.discounted_returns(rewards, float(discount), tail)


class ReturnTracker:
    """Running ``gbar`` and entropy EMA per task."""

    def __init__(self, num_tasks: int, v_max: float, discount: float, alpha: float = 0.0,
                 entropy_decay: float = 0.99, use_entropy: bool = True):
        if num_tasks < 1:
            raise ValueError("ReturnTracker needs at least one task")
        self.num_tasks = num_tasks
        self.v_max = float(v_max)
        self.discount = float(discount)
        self.alpha = float(alpha)
        self.entropy_decay = float(entropy_decay)
        self.use_entropy = use_entropy
        self.gbar = np.zeros(num_tasks)
        # nan until the first observation; EMA is seeded by it
        self.entropy = np.full(num_tasks, np.nan)

    def _check(self, task):
        if not 0 <= int(task) < self.num_tasks:
            raise IndexError(f"unknown task id {task} (tracker has {self.num_tasks} tasks)")
        return int(task)

    def update_gbar(self, task, returns) -> "ReturnTracker":
        i = self._check(task)
        returns = np.asarray(returns, dtype=np.float64)
        if returns.size:
            self.gbar[i] = max(float(np.max(np.abs(returns))), self.gbar[i])
        return self

    def observe_entropy(self, task, value: float):
        """Fold one batch-mean ``-log pi`` estimate into the task's EMA."""
        i = self._check(task)
        if np.isnan(self.entropy[i]):
            self.entropy[i] = value
        else:
            d = self.entropy_decay
            self.entropy[i] = d * self.entropy[i] + (1.0 - d) * value

    def entropy_correction(self, task) -> float:
        i = self._check(task)
        if self.discount >= 1.0:
            raise ValueError("entropy correction is unbounded for discount >= 1")
        if not self.use_entropy or np.isnan(self.entropy[i]):
            return 0.0
        # magnitude: a negative entropy estimate would otherwise shrink the bound
        return self.alpha * abs(float(self.entropy[i])) / (1.0 - self.discount)

    def scale(self, task) -> float:
        i = self._check(task)
        denom = max(self.gbar[i] + self.entropy_correction(i), DENOM_FLOOR)
        return self.v_max / denom

    def scales(self) -> np.ndarray:
        return np.array([self.scale(i) for i in range(self.num_tasks)])

    def normalize_rewards(self, task, rewards) -> np.ndarray:
        return np.asarray(rewards, dtype=np.float64) * self.scale(task)

    def normalize_batch(self, tasks, rewards) -> np.ndarray:
        """Per-sample scaling for a mixed-task batch (returns a new array)."""
        return np.asarray(rewards, dtype=np.float64) * self.scales()[np.asarray(tasks, dtype=np.int64)]

    def append_task(self):
        self.num_tasks += 1
        self.gbar = np.append(self.gbar, 0.0)
        self.entropy = np.append(self.entropy, np.nan)

    def state_arrays(self, prefix="tracker") -> dict:
        return {f"{prefix}.gbar": self.gbar.copy(), f"{prefix}.entropy": self.entropy.copy(),
                f"{prefix}.alpha": np.array([self.alpha])}

    def load_state_arrays(self, arrays: dict, prefix="tracker"):
        self.gbar = arrays[f"{prefix}.gbar"].copy()
        self.entropy = arrays[f"{prefix}.entropy"].copy()
        self.alpha = float(arrays[f"{prefix}.alpha"][0])
        self.num_tasks = self.gbar.size


def update_gbar(tracker: ReturnTracker, task, returns) -> ReturnTracker:
    return tracker.update_gbar(task, returns)


def entropy_correction(tracker: ReturnTracker, task) -> float:
    return tracker.entropy_correction(task)


def normalize_rewards(tracker: ReturnTracker, task, rewards) -> np.ndarray:
    return tracker.normalize_rewards(task, rewards)
