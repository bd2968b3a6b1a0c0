"""Categorical value distributions on a fixed, evenly spaced support."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from brclab import kernels
from brclab.autodiff import Tensor, ops


@dataclass(frozen=True)
class Support:
    v_min: float
    v_max: float
    n_atoms: int

    def __post_init__(self):
        if not np.isfinite(self.v_min) or not np.isfinite(self.v_max) or not self.v_min < self.v_max:
            raise ValueError(f"support needs finite v_min < v_max, got ({self.v_min}, {self.v_max})")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 2:
            raise ValueError(f"support needs at least 2 atoms, got {self.n_atoms}")

    @property
    def delta(self) -> float:
        return (self.v_max - self.v_min) / (self.n_atoms - 1)

    @property
    def atoms(self) -> np.ndarray:
        return self.v_min + np.arange(self.n_atoms) * self.delta


def make_support(v_min: float, v_max: float, n_atoms: int) -> Support:
    return Support(float(v_min), float(v_max), int(n_atoms))


class ValueDistribution:
    """Probability vector (or batch of them, last axis) over a support."""

    __slots__ = ("probs",)

    def __init__(self, probs, check=True, tol=1e-9):
        probs = np.asarray(probs, dtype=np.float64)
        if check:
            if np.any(probs < 0):
                raise ValueError("probabilities must be non-negative")
            total = probs.sum(axis=-1)
            if np.any(np.abs(total - 1.0) > tol):
                raise ValueError(f"probabilities must sum to 1 (got {total})")
        self.probs = probs

    def __len__(self):
        return self.probs.shape[-1]


def _probs(x) -> np.ndarray:
    return x.probs if isinstance(x, ValueDistribution) else np.asarray(x, dtype=np.float64)


def project(target_atoms, target_probs, support: Support) -> ValueDistribution:
    """Split each shifted atom's mass between its two neighbouring support points.

    Accepts a single distribution (1-D arrays) or a batch (2-D, one row per sample).
    Atoms outside the support are clamped to the nearest endpoint.
    """
    atoms = np.asarray(target_atoms, dtype=np.float64)
    probs = _probs(target_probs)
    single = atoms.ndim == 1
    atoms2 = np.ascontiguousarray(np.atleast_2d(atoms))
    probs2 = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(probs), atoms2.shape))
    out = kernels.categorical_projection(atoms2, probs2, support.v_min, support.v_max, support.n_atoms)
    return ValueDistribution(out[0] if single else out, check=False)


def bellman_shift(reward, discount, entropy_bonus, support: Support) -> np.ndarray:
    """Shifted atoms ``r + discount * (z + bonus)``.

    Scalars give a vector over atoms; per-sample arrays of length B give [B, n_atoms].
    """
    z = support.atoms
    reward = np.asarray(reward, dtype=np.float64)
    discount = np.asarray(discount, dtype=np.float64)
    bonus = np.asarray(entropy_bonus, dtype=np.float64)
    if reward.ndim == 0 and discount.ndim == 0 and bonus.ndim == 0:
        return float(reward) + float(discount) * (z + float(bonus))
    return reward[..., None] + discount[..., None] * (z + bonus[..., None])


def cross_entropy_loss(pred_logits: Tensor, target) -> Tensor:
    """Mean over the batch of ``-sum_i target_i * log_softmax(logits)_i``.

    For a 1-D logit vector this is the plain cross-entropy.
    """
    t = _probs(target)
    if t.shape[-1] != pred_logits.shape[-1]:
        raise ValueError(f"target has {t.shape[-1]} atoms, logits have {pred_logits.shape[-1]}")
    per_sample = ops.sum(ops.mul(ops.log_softmax(pred_logits), -t), axis=-1)
    return ops.mean(per_sample)


def cross_entropy_per_sample(pred_logits: Tensor, target) -> Tensor:
    return ops.sum(ops.mul(ops.log_softmax(pred_logits), -_probs(target)), axis=-1)


def mean_value(dist, support: Support) -> np.ndarray | float:
    """Expected value ``sum_i p_i z_i`` (batched over leading axes)."""
    out = _probs(dist) @ support.atoms
    return float(out) if np.ndim(out) == 0 else out


def entropy(dist) -> np.ndarray | float:
    p = _probs(dist)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out
