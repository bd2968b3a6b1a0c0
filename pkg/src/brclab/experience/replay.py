"""Per-task ring buffers and multi-task batch sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from brclab import kernels


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminated: bool
    truncated: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    tasks: np.ndarray
    discount: np.ndarray | None = None  # per-sample bootstrap discount for n-step batches

    def __len__(self):
        return self.reward.shape[0]


class ReplayBuffer:
    """FIFO ring buffer for one task. Stored rewards are raw and never modified."""

    FIELDS = ("obs", "action", "reward", "next_obs", "terminated", "truncated")

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    @property
    def oldest(self) -> int:
        return (self.ptr - self.size) % self.capacity

    def push(self, transition: Transition):
        if transition.terminated and transition.truncated:
            raise ValueError("a transition cannot be both terminated and truncated")
        i = self.ptr
        self.obs[i] = transition.obs
        self.action[i] = np.asarray(transition.action, dtype=np.float64).reshape(-1)
        self.reward[i] = transition.reward
        self.next_obs[i] = transition.next_obs
        self.terminated[i] = transition.terminated
        self.truncated[i] = transition.truncated
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def physical(self, logical) -> np.ndarray:
        """Ring slot of the logical index (0 = oldest stored transition)."""
        return (self.oldest + np.asarray(logical)) % self.capacity

    def get(self, logical: int) -> Transition:
        if not 0 <= logical < self.size:
            raise IndexError(f"index {logical} outside buffer of size {self.size}")
        i = int(self.physical(logical))
        return Transition(self.obs[i].copy(), self.action[i].copy(), float(self.reward[i]),
                          self.next_obs[i].copy(), bool(self.terminated[i]), bool(self.truncated[i]))

    def transitions(self):
        for k in range(self.size):
            yield self.get(k)

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}.{f}": getattr(self, f).astype(np.float64) for f in self.FIELDS}
        out[f"{prefix}.meta"] = np.array([self.ptr, self.size, self.capacity], dtype=np.float64)
        return out

    @classmethod
    def from_state_arrays(cls, prefix: str, arrays: dict) -> "ReplayBuffer":
        ptr, size, capacity = (int(x) for x in arrays[f"{prefix}.meta"])
        obs = arrays[f"{prefix}.obs"]
        buf = cls(capacity, obs.shape[1], arrays[f"{prefix}.action"].shape[1])
        for f in cls.FIELDS:
            src = arrays[f"{prefix}.{f}"]
            getattr(buf, f)[...] = src.astype(bool) if f in ("terminated", "truncated") else src
        buf.ptr, buf.size = ptr, size
        return buf


def push(buffers, task: int, transition: Transition):
    buffers[task].push(transition)


def n_step_indices(buffer: ReplayBuffer, idx, n: int, discount: float):
    """Vectorised n-step windows starting at ring slots ``idx``.

    Returns ``(G_n, last_slot, steps, terminated)``. Windows stop at episode
    ends and at the newest stored transition.
    """
    if n < 1:
        raise ValueError("n-step horizon must be >= 1")
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return kernels.nstep_returns(buffer.reward, buffer.terminated, buffer.truncated, idx,
                                 buffer.oldest, buffer.size, buffer.capacity, n, discount)


def n_step_view(buffer: ReplayBuffer, index: int, n: int, discount: float):
    """``(obs, action, G_n, obs_after_window, done, steps)`` for logical ``index``."""
    slot = buffer.physical(np.array([index]))
    ret, last, steps, term = n_step_indices(buffer, slot, n, discount)
    s, j = int(slot[0]), int(last[0])
    return (buffer.obs[s].copy(), buffer.action[s].copy(), float(ret[0]), buffer.next_obs[j].copy(),
            bool(term[0]), int(steps[0]))


def sample_multitask(buffers, batch_size: int, rng: np.random.Generator, n_step: int = 1,
                     discount: float = 1.0, task_rows=None) -> Batch:
    """Tasks uniform, transitions uniform within the drawn task.

    ``task_rows`` maps buffer position to the task id carried by the batch
    (defaults to the position itself).
    """
    for k, b in enumerate(buffers):
        if b.size == 0:
            raise ValueError(f"replay buffer for task {k} is empty")
    n_tasks = len(buffers)
    tasks = rng.integers(0, n_tasks, size=batch_size)
    u = rng.random(batch_size)
    obs_dim = buffers[0].obs.shape[1]
    act_dim = buffers[0].action.shape[1]
    obs = np.empty((batch_size, obs_dim))
    act = np.empty((batch_size, act_dim))
    rew = np.empty(batch_size)
    nxt = np.empty((batch_size, obs_dim))
    term = np.empty(batch_size, dtype=bool)
    disc = np.empty(batch_size) if n_step > 1 else None
    for k, b in enumerate(buffers):
        rows = np.nonzero(tasks == k)[0]
        if rows.size == 0:
            continue
        logical = np.minimum((u[rows] * b.size).astype(np.int64), b.size - 1)
        slot = b.physical(logical)
        obs[rows] = b.obs[slot]
        act[rows] = b.action[slot]
        if n_step > 1:
            ret, last, steps, t = n_step_indices(b, slot, n_step, discount)
            rew[rows] = ret
            nxt[rows] = b.next_obs[last]
            term[rows] = t
            disc[rows] = discount ** steps
        else:
            rew[rows] = b.reward[slot]
            nxt[rows] = b.next_obs[slot]
            term[rows] = b.terminated[slot]
    if task_rows is not None:
        tasks = np.asarray(task_rows, dtype=np.int64)[tasks]
    return Batch(obs, act, rew, nxt, term, tasks, disc)
