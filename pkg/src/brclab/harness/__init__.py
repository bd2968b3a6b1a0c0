"""Experiment front door: configs, checkpoints, runs, ablations, transfer and diagnostics."""

from brclab.harness.checkpoint import (
    MAGIC,
    VERSION,
    Checkpoint,
    CheckpointError,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from brclab.harness.config import PLAYERS, ConfigError, RunConfig, TransferSettings, load_config

__all__ = [
    "MAGIC",
    "PLAYERS",
    "VERSION",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "RunConfig",
    "TransferSettings",
    "decode",
    "encode",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
]
