"""Tensors and the gradient tape.

Operations on tensors record a backward closure on the innermost active
:class:`GradTape`. Outside any tape nothing is recorded, which is how target
computations block gradients.
"""

from __future__ import annotations

import numpy as np

_TAPES: list["GradTape"] = []


class Tensor:
    """Dense float64 array with an accumulating gradient buffer."""

    __slots__ = ("data", "_grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, order="C")
        self._grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out._grad = None
        out.requires_grad = False
        out.name = None
        return out

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def __matmul__(self, other):
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def active_tape():
    return _TAPES[-1] if _TAPES else None


def make_node(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result and record ``backward(grad_out)`` if anything upstream needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out._grad = None
    out.name = None
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._nodes.append((out, backward))
    else:
        out.requires_grad = False
    return out


def accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t._grad is None:
        t._grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t._grad += g


class GradTape:
    """Records operations executed inside ``with GradTape() as tape:``."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor):
        if not self._nodes:
            raise RuntimeError("backward called on an empty tape; run a forward pass under the tape first")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if not any(out is loss for out, _ in reversed(self._nodes)):
            raise RuntimeError("loss was not produced under this tape")
        for out, _ in self._nodes:
            out._grad = None
        loss._grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out._grad is not None:
                fn(out._grad)


def backward(tape: GradTape, loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every leaf tensor that requires grad."""
    tape.backward(loss)


from brclab.autodiff import ops  # noqa: E402  (circular: ops needs Tensor)
