"""Finite-difference gradient checking."""

import numpy as np

from brclab.autodiff.params import ParameterSet
from brclab.autodiff.tensor import GradTape


def numerical_grad(fn, array: np.ndarray, h=1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` wrt every entry of ``array`` (perturbed in place)."""
    if not array.flags.c_contiguous:
        raise ValueError("numerical_grad perturbs in place and needs a C-contiguous array")
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor=1e-6) -> float:
    """Worst entrywise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero entries from dividing finite-difference noise
    by ~0; below it the measure degrades to absolute error / floor.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(network, x, loss_fn, h=1e-5, params: ParameterSet = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn(network, x)`` must return a scalar Tensor. Every parameter in
    ``params`` (default: ``network.params``) is checked.
    """
    params = network.params if params is None else params
    params.zero_grad()
    with GradTape() as tape:
        loss = loss_fn(network, x)
    tape.backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}
    params.zero_grad()

    def value():
        return float(loss_fn(network, x).data)

    worst = 0.0
    for name, t in params.items():
        numeric = numerical_grad(value, t.data, h)
        worst = max(worst, relative_error(analytic[name], numeric))
    return worst
