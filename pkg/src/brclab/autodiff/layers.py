"""Layers and the two network families used by the agents."""

from __future__ import annotations

import math

import numpy as np

from brclab.autodiff import ops
from brclab.autodiff.params import ParameterSet
from brclab.autodiff.tensor import GradTape, Tensor, as_tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


class Module:
    """Parameter discovery by attribute order, so names are deterministic."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    @property
    def params(self) -> ParameterSet:
        cached = getattr(self, "_params", None)
        if cached is None:
            cached = ParameterSet(self.named_parameters())
            self._params = cached
        return cached

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class DenseLayer(Module):
    def __init__(self, fan_in, fan_out, rng=None, init="orthogonal", gain=math.sqrt(2.0), name="dense"):
        self._name = name
        self.fan_in, self.fan_out = fan_in, fan_out
        if init == "zeros":
            w = np.zeros((fan_in, fan_out))
        elif init == "identity":
            w = np.eye(fan_in, fan_out)
        else:
            w = orthogonal(rng, fan_in, fan_out, gain)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.fan_in:
            raise ValueError(f"{self._name}: expected input width {self.fan_in}, got {x.shape[-1]}")
        return ops.dense(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        if eps <= 0:
            raise ValueError("LayerNorm epsilon must be positive")
        self.eps = eps
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def named_parameters(self, prefix=""):
        yield f"{prefix}scale", self.scale
        yield f"{prefix}shift", self.shift

    def forward(self, x):
        return ops.layer_norm(as_tensor(x), self.scale, self.shift, self.eps)


class ResidualBlock(Module):
    """``x + LN(Dense(relu(LN(Dense(x)))))``."""

    def __init__(self, width, rng, name="block"):
        self.fc1 = DenseLayer(width, width, rng, name=f"{name}.fc1")
        self.ln1 = LayerNorm(width)
        self.fc2 = DenseLayer(width, width, rng, name=f"{name}.fc2")
        self.ln2 = LayerNorm(width)

    def forward(self, x):
        h = ops.relu(self.ln1(self.fc1(x)))
        return ops.add(x, self.ln2(self.fc2(h)))


class BroNet(Module):
    """Residual MLP: Dense-LN-ReLU input stage, residual blocks, linear head.

    With ``n_heads > 1`` the head emits one output group per task and
    ``forward`` selects each sample's group (the separate-heads design).
    """

    def __init__(self, in_dim, width, n_blocks, out_dim, rng, n_heads=1, head_init="zeros", name="bronet"):
        self._name = name
        self.in_dim, self.width, self.out_dim, self.n_heads = in_dim, width, out_dim, n_heads
        self.inp = DenseLayer(in_dim, width, rng, name=f"{name}.inp")
        self.inp_ln = LayerNorm(width)
        self.blocks = [ResidualBlock(width, rng, name=f"{name}.blocks.{i}") for i in range(n_blocks)]
        if out_dim is not None:
            self.head = DenseLayer(width, out_dim * n_heads, rng, init=head_init, gain=1.0, name=f"{name}.head")

    def body(self, x):
        """Representation before the head (fused kernel)."""
        return ops.bronet(self._check(x), self, head=False)

    def forward(self, x, heads=None):
        if self.out_dim is None:
            raise ValueError(f"{self._name}: network has no head; use body()")
        out = ops.bronet(self._check(x), self, head=True)
        return self._select(out, heads)

    def _check(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self._name}.inp: expected input width {self.in_dim}, got {x.shape[-1]}")
        return x

    def _select(self, out, heads):
        if self.n_heads == 1:
            return out
        if heads is None:
            raise ValueError(f"{self._name}: per-task heads need task indices")
        return ops.select(ops.reshape(out, (out.shape[0], self.n_heads, self.out_dim)), heads)

    def body_reference(self, x):
        """Layer-by-layer body; same values as ``body`` through separate tape nodes."""
        h = ops.relu(self.inp_ln(self.inp(x)))
        for block in self.blocks:
            h = block(h)
        return h

    def forward_reference(self, x, heads=None):
        return self._select(self.head(self.body_reference(x)), heads)

    def shared_names(self):
        """Parameter names shared by all tasks (everything but per-task heads)."""
        if self.n_heads == 1:
            return self.params.names()
        return [n for n in self.params.names() if not n.startswith("head.")]


class TanhGaussianActor(Module):
    """BroNet-style trunk with tanh-squashed Gaussian output."""

    def __init__(self, in_dim, width, n_blocks, action_dim, rng, n_heads=1, name="actor"):
        self._name = name
        self.action_dim, self.n_heads = action_dim, n_heads
        self.trunk = BroNet(in_dim, width, n_blocks, None, rng, name=f"{name}.trunk")
        self.mean = DenseLayer(width, action_dim * n_heads, rng, gain=0.01, name=f"{name}.mean")
        self.log_std = DenseLayer(width, action_dim * n_heads, rng, gain=0.01, name=f"{name}.log_std")
        # bias so the squashed log-std starts at 0 (unit std)
        self.log_std.bias.data[:] = np.arctanh(2.0 * (0.0 - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN) - 1.0)

    def _heads(self, layer, h, heads):
        out = layer(h)
        if self.n_heads == 1:
            return out
        return ops.select(ops.reshape(out, (out.shape[0], self.n_heads, self.action_dim)), heads)

    def distribution(self, x, heads=None):
        h = self.trunk.body(x)
        mean = self._heads(self.mean, h, heads)
        raw = self._heads(self.log_std, h, heads)
        log_std = ops.add(ops.mul(ops.add(ops.tanh(raw), 1.0), 0.5 * (LOG_STD_MAX - LOG_STD_MIN)), LOG_STD_MIN)
        return mean, log_std

    def forward(self, x, noise, heads=None):
        """Reparameterised sample; returns ``(action, log_prob)`` with log_prob of shape [B]."""
        mean, log_std = self.distribution(x, heads)
        noise = np.asarray(noise, dtype=np.float64)
        u = ops.add(mean, ops.mul(ops.exp(log_std), noise))
        action = ops.tanh(u)
        gauss = ops.sub(-0.5 * noise * noise - 0.5 * math.log(2.0 * math.pi), log_std)
        # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
        squash = ops.mul(ops.sub(ops.sub(math.log(2.0), u), ops.softplus(ops.mul(u, -2.0))), 2.0)
        log_prob = ops.sum(ops.sub(gauss, squash), axis=-1)
        return action, log_prob

    def deterministic(self, x, heads=None):
        mean, _ = self.distribution(x, heads)
        return ops.tanh(mean)


def forward(network: Module, x, tape: GradTape, **kwargs):
    """Run ``network`` on ``x`` with every op recorded on ``tape``."""
    with tape:
        return network(x, **kwargs)
