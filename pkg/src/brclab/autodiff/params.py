"""Named parameter collections and the AdamW optimizer."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from brclab import kernels
from brclab.autodiff.tensor import Tensor


class ParameterSet:
    """Ordered ``name -> Tensor`` map plus an update-step counter."""

    def __init__(self, named=()):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.step = 0
        for name, t in named:
            self.add(name, t)

    def add(self, name: str, t: Tensor):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        t.name = name
        self._params[name] = t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self):
        return list(self._params)

    @property
    def total_size(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([t.grad.ravel() for t in self._params.values()])

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def assign(self, other: "ParameterSet"):
        for name, t in self._params.items():
            src = other[name].data
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {src.shape} vs {t.data.shape}")
            t.data[...] = src

    def storage(self) -> np.ndarray:
        """One contiguous float64 buffer holding every parameter.

        On first use (or after a tensor was rebound elsewhere) the tensors are
        re-pointed at views of a fresh buffer, so in-place updates of the
        buffer are updates of the parameters.
        """
        views = getattr(self, "_views", None)
        if views is not None and all(t.data is v for t, v in views):
            return self._storage
        storage = np.concatenate([t.data.ravel() for t in self._params.values()]) if self._params \
            else np.zeros(0)
        views, off = [], 0
        for t in self._params.values():
            n = t.data.size
            t.data = storage[off:off + n].reshape(t.data.shape)
            views.append((t, t.data))
            off += n
        self._storage, self._views = storage, views
        return storage

    def gather_grad(self) -> np.ndarray:
        """Concatenated gradients (zeros where a parameter has none)."""
        parts = [t._grad.ravel() if t._grad is not None else np.zeros(t.data.size) for t in self._params.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    @contextmanager
    def frozen(self):
        """Temporarily stop gradient accumulation into these parameters."""
        for t in self._params.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for t in self._params.values():
                t.requires_grad = True


class AdamW:
    """Adam with decoupled weight decay (``theta -= lr * wd * theta`` before the Adam step)."""

    def __init__(self, params: ParameterSet, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        size = params.total_size
        self._m = np.zeros(size)
        self._v = np.zeros(size)
        # per-parameter views of the flat moment buffers
        self.m, self.v, off = {}, {}, 0
        for name, p in params.items():
            n = p.data.size
            self.m[name] = self._m[off:off + n].reshape(p.data.shape)
            self.v[name] = self._v[off:off + n].reshape(p.data.shape)
            off += n

    def step(self):
        g = self.params.gather_grad()
        if not np.all(np.isfinite(g)):
            for name, p in self.params.items():
                if p._grad is not None and not np.all(np.isfinite(p._grad)):
                    raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        theta = self.params.storage()
        self.t += 1
        self.params.step += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        kernels.adamw_update(theta, g, self._m, self._v, self.lr, self.beta1, self.beta2, self.eps,
                             self.lr * self.weight_decay, bc1, bc2)
        self.params.zero_grad()

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float64)}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict):
        self.t = int(arrays[f"{prefix}.t"][0])
        for name in self.params:
            self.m[name][...] = arrays[f"{prefix}.m.{name}"]
            self.v[name][...] = arrays[f"{prefix}.v.{name}"]


def adamw_step(params: ParameterSet, state: AdamW) -> ParameterSet:
    if state.params is not params:
        raise ValueError("optimizer state belongs to a different ParameterSet")
    state.step()
    return params
