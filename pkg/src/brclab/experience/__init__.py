"""Toy environments and replay storage."""

from brclab.experience.envs import (
    CHAIN_SCALES,
    PointGoal,
    ScaledChain,
    Suite,
    make_env,
    point_goal_angle,
    score_anchors,
)
from brclab.experience.replay import (
    Batch,
    ReplayBuffer,
    Transition,
    n_step_view,
    push,
    sample_multitask,
)

__all__ = [
    "CHAIN_SCALES",
    "Batch",
    "PointGoal",
    "ReplayBuffer",
    "ScaledChain",
    "Suite",
    "Transition",
    "make_env",
    "n_step_view",
    "point_goal_angle",
    "push",
    "sample_multitask",
    "score_anchors",
]
