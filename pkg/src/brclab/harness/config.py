"""Run configuration: a JSON document validated field by field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from brclab.agents.config import AgentConfig
from brclab.experience.envs import CHAIN_SCALES, SUITES

PLAYERS = ("SQ", "CE", "TE")
PROTOCOLS = ("model", "embedding_tuning", "data")


class ConfigError(ValueError):
    """Carries every field-level problem found in one config."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass
class TransferSettings:
    targets: list = field(default_factory=lambda: [8])
    protocol: str = "model"
    budget: int = 300
    mode: str = "few_shot"
    threshold: float | None = None  # score for steps-to-threshold; None -> from-scratch final score
    with_scratch: bool = True


@dataclass
class RunConfig:
    suite: str = "point_goal_dense"
    tasks: list = field(default_factory=lambda: [0])
    agent: AgentConfig = field(default_factory=AgentConfig)
    variant: dict | None = None  # {"SQ": bool, "CE": bool, "TE": bool}; None -> agent as given
    small_width: int = 64  # critic width when SQ is off
    seeds: list = field(default_factory=lambda: [0])
    env_steps: int = 1000  # per task
    eval_interval: int = 0
    diag_interval: int = 0
    n_goals: int = 8
    output_dir: str = "runs"
    transfer: TransferSettings = field(default_factory=TransferSettings)

    # ------------------------------------------------------------------ codec

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(["top level: expected a JSON object"])
        errors = []
        known = {f.name for f in fields(cls)}
        errors += [f"{k}: unknown key" for k in sorted(set(data) - known)]
        kwargs = {k: v for k, v in data.items() if k in known}
        agent = kwargs.pop("agent", {})
        if isinstance(agent, dict):
            try:
                kwargs["agent"] = AgentConfig.from_dict(agent)
            except (ValueError, TypeError) as exc:
                errors.append(f"agent: {exc}")
        else:
            errors.append("agent: expected an object")
        transfer = kwargs.pop("transfer", {})
        if isinstance(transfer, dict):
            tknown = {f.name for f in fields(TransferSettings)}
            errors += [f"transfer.{k}: unknown key" for k in sorted(set(transfer) - tknown)]
            kwargs["transfer"] = TransferSettings(**{k: v for k, v in transfer.items() if k in tknown})
        else:
            errors.append("transfer: expected an object")
        if errors:
            raise ConfigError(errors)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"json: {exc}"]) from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["agent"] = self.agent.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def echo(self) -> dict:
        """Config plus the list of agent fields that differ from the recipe."""
        out = self.to_dict()
        out["deviations"] = self.effective_agent(self.variant).deviations()
        return out

    # ------------------------------------------------------------------ checks

    def validate(self):
        errors = []
        if self.suite not in SUITES:
            errors.append(f"suite: {self.suite!r} is not one of {list(SUITES)}")
        if not isinstance(self.tasks, list) or not self.tasks:
            errors.append("tasks: expected a non-empty list of task ids")
        else:
            limit = len(CHAIN_SCALES) if self.suite == "scaled_chain" else 2 * self.n_goals
            for i, t in enumerate(self.tasks):
                if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < limit:
                    errors.append(f"tasks[{i}]: {t!r} is not a task id in 0..{limit - 1}")
            if len(set(map(repr, self.tasks))) != len(self.tasks):
                errors.append("tasks: duplicate task ids")
        if not isinstance(self.seeds, list) or not self.seeds:
            errors.append("seeds: expected a non-empty list of integers")
        else:
            for i, s in enumerate(self.seeds):
                if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                    errors.append(f"seeds[{i}]: {s!r} is not a non-negative integer")
        if self.variant is not None:
            if not isinstance(self.variant, dict):
                errors.append("variant: expected an object with SQ/CE/TE booleans")
            else:
                for k, v in self.variant.items():
                    if k not in PLAYERS:
                        errors.append(f"variant.{k}: unknown toggle (expected one of {list(PLAYERS)})")
                    elif not isinstance(v, bool):
                        errors.append(f"variant.{k}: expected true or false")
        for name in ("env_steps", "small_width", "n_goals"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                errors.append(f"{name}: expected a positive integer")
        for name in ("eval_interval", "diag_interval"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                errors.append(f"{name}: expected a non-negative integer")
        t = self.transfer
        if t.protocol not in PROTOCOLS:
            errors.append(f"transfer.protocol: {t.protocol!r} is not one of {list(PROTOCOLS)}")
        if t.mode not in ("zero_shot", "few_shot"):
            errors.append("transfer.mode: expected 'zero_shot' or 'few_shot'")
        if not isinstance(t.budget, int) or not 1 <= t.budget <= 1000:
            errors.append("transfer.budget: expected an integer in 1..1000")
        if not isinstance(t.targets, list) or not t.targets:
            errors.append("transfer.targets: expected a non-empty list of task ids")
        if errors:
            raise ConfigError(errors)

    # ------------------------------------------------------------------ variants

    def effective_agent(self, variant=None) -> AgentConfig:
        """Agent config with the SQ/CE/TE toggles applied (missing toggles stay on)."""
        if variant is None:
            return self.agent
        on = {p: bool(variant.get(p, True)) for p in PLAYERS}
        d = self.agent.to_dict()
        if not on["SQ"]:
            d["critic_width"] = self.small_width
        if not on["CE"]:
            d["loss"], d["normalize_returns"] = "mse", False
        if not on["TE"]:
            d["task_embeddings"] = False
        return AgentConfig.from_dict(d)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_json(fh.read())
