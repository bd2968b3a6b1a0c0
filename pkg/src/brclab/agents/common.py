"""Pieces shared by the continuous and discrete agents."""

from __future__ import annotations

import numpy as np

from brclab.autodiff import BroNet, ParameterSet


def polyak_update(online: ParameterSet, target: ParameterSet, tau: float) -> ParameterSet:
    """``target <- (1 - tau) * target + tau * online`` for every parameter."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if online.names() != target.names():
        raise ValueError("online and target parameter sets differ in layout")
    src, dst = online.storage(), target.storage()
    if src.shape != dst.shape:
        raise ValueError("online and target parameter sets differ in size")
    if tau == 1.0:
        dst[...] = src
    elif tau > 0.0:
        dst *= 1.0 - tau
        dst += tau * src
    return target


def clone_bronet(net: BroNet) -> BroNet:
    """Structural copy with identical parameter values."""
    twin = BroNet(net.in_dim, net.width, len(net.blocks), net.out_dim, np.random.default_rng(0),
                  n_heads=net.n_heads, head_init="zeros", name=net._name + ".target")
    twin.params.assign(net.params)
    return twin


def merged(named_sets) -> ParameterSet:
    """One ParameterSet over several networks, names prefixed (tensors shared)."""
    out = ParameterSet()
    for prefix, ps in named_sets:
        for name, t in ps.items():
            out.add(f"{prefix}.{name}", t)
    return out


def per_task_mean(values: np.ndarray, tasks: np.ndarray, num_tasks: int) -> np.ndarray:
    """Mean of ``values`` for each task id; nan where a task is absent."""
    counts = np.bincount(tasks, minlength=num_tasks).astype(np.float64)
    sums = np.bincount(tasks, weights=values, minlength=num_tasks)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1.0), np.nan)


def global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.vdot(a, a)) for a in arrays)))
