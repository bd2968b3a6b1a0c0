"""Agents and the training loop."""

from brclab.agents.common import polyak_update
from brclab.agents.config import AgentConfig
from brclab.agents.discrete import DiscreteAgent
from brclab.agents.sac import SACAgent
from brclab.agents.train import Trainer, evaluate_policy, make_agent, train

__all__ = ["AgentConfig", "DiscreteAgent", "SACAgent", "Trainer", "evaluate_policy", "make_agent",
           "polyak_update", "train"]
