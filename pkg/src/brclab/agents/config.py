"""Agent hyperparameters.

Defaults follow the published recipe except where a desk-scale run cannot
afford it; every such field is listed in ``REFERENCE_VALUES`` and reported by
``AgentConfig.deviations()``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

# recipe values; any field differing from these is reported as a deviation
REFERENCE_VALUES = {
    "discount": 0.99,
    "utd": 2,
    "action_repeat": 1,
    "tau": 5e-3,
    "target_update_every": 1,
    "weight_decay": 1e-4,
    "actor_lr": 3e-4,
    "critic_lr": 3e-4,
    "temperature_lr": 3e-4,
    "init_alpha": 0.1,
    "n_atoms": 101,
    "v_min": -10.0,
    "v_max": 10.0,
    "batch_size": 256,
    "multitask_batch_factor": 4,
    "buffer_size": 1_000_000,
    "num_critics": 2,
    "embedding_dim": 32,
    "actor_width": 256,
    "actor_depth": 1,
    "critic_width": 4096,
    "critic_depth": 2,
    "discrete_lr": 1e-4,
    "discrete_batch_size": 256,
    "discrete_buffer_size": 100_000,
    "eps_start": 1.0,
    "eps_end": 0.01,
    "eps_decay_steps": 5000,
    "n_step": 3,
}


@dataclass
class AgentConfig:
    discount: float = 0.99
    utd: int = 2
    action_repeat: int = 1
    tau: float = 5e-3
    target_update_every: int = 1
    weight_decay: float = 1e-4
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    temperature_lr: float = 3e-4
    init_alpha: float = 0.1
    target_entropy: float | None = None  # None -> -|A|/2
    n_atoms: int = 101
    v_min: float = -10.0
    v_max: float = 10.0
    batch_size: int = 256  # single-task batch
    multitask_batch_factor: int = 4
    buffer_size: int = 100_000
    num_critics: int = 2
    embedding_dim: int = 8
    actor_width: int = 256
    actor_depth: int = 1
    critic_width: int = 256
    critic_depth: int = 2
    # design-choice toggles
    loss: str = "ce"  # "ce" categorical cross-entropy, "mse" scalar squared TD error
    normalize_returns: bool = True
    task_embeddings: bool = True  # False -> separate per-task output heads
    entropy_ema: float = 0.99
    # discrete agent
    discrete_lr: float = 1e-4
    discrete_batch_size: int = 256
    discrete_buffer_size: int = 20_000
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_steps: int = 5000
    n_step: int = 3
    # data collection
    random_steps: int = 0  # initial iterations with uniformly random actions

    def __post_init__(self):
        self.validate()

    def validate(self):
        errors = []
        if not 0.0 < self.discount < 1.0:
            errors.append("discount must lie in (0, 1)")
        for name in ("utd", "batch_size", "multitask_batch_factor", "buffer_size", "num_critics",
                     "embedding_dim", "actor_width", "critic_width", "n_atoms", "discrete_batch_size",
                     "discrete_buffer_size", "n_step", "target_update_every", "action_repeat"):
            if int(getattr(self, name)) < 1:
                errors.append(f"{name} must be >= 1")
        for name in ("actor_depth", "critic_depth", "random_steps", "eps_decay_steps"):
            if int(getattr(self, name)) < 0:
                errors.append(f"{name} must be >= 0")
        for name in ("actor_lr", "critic_lr", "temperature_lr", "discrete_lr", "init_alpha"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive")
        if not 0.0 < self.tau <= 1.0:
            errors.append("tau must lie in (0, 1]")
        if self.weight_decay < 0:
            errors.append("weight_decay must be >= 0")
        if not self.v_min < self.v_max:
            errors.append("v_min must be below v_max")
        if self.n_atoms < 2:
            errors.append("n_atoms must be >= 2")
        if self.loss not in ("ce", "mse"):
            errors.append("loss must be 'ce' or 'mse'")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            errors.append("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 <= self.entropy_ema < 1.0:
            errors.append("entropy_ema must lie in [0, 1)")
        if errors:
            raise ValueError("invalid agent config: " + "; ".join(errors))

    def batch_for(self, num_tasks: int) -> int:
        return self.batch_size * (self.multitask_batch_factor if num_tasks > 1 else 1)

    def entropy_target(self, action_dim: int) -> float:
        return -action_dim / 2.0 if self.target_entropy is None else float(self.target_entropy)

    def epsilon(self, step: int) -> float:
        if self.eps_decay_steps == 0:
            return self.eps_end
        frac = min(step / self.eps_decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown agent config keys: {unknown}")
        return cls(**data)

    def deviations(self) -> dict:
        """``{field: {"value": ours, "reference": recipe}}`` for non-recipe values."""
        return {k: {"value": getattr(self, k), "reference": ref}
                for k, ref in REFERENCE_VALUES.items() if getattr(self, k) != ref}
