"""Differentiable operations. Every function takes and returns Tensors."""

from __future__ import annotations

import numpy as np

from brclab import _bronet_kernel, kernels
from brclab.autodiff.tensor import Tensor, accumulate, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_node(a.data @ b.data, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` as a single node."""

    def backward(g):
        if x.requires_grad:
            accumulate(x, g @ weight.data.T)
        if weight.requires_grad:
            accumulate(weight, x.data.T @ g)
        if bias.requires_grad:
            accumulate(bias, g.sum(axis=0))

    return make_node(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        accumulate(x, g * mask)

    return make_node(x.data * mask, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        accumulate(x, g * (1.0 - y * y))

    return make_node(y, (x,), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def backward(g):
        accumulate(x, g * y)

    return make_node(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        accumulate(x, g / x.data)

    return make_node(np.log(x.data), (x,), backward)


def softplus(x: Tensor) -> Tensor:
    def backward(g):
        accumulate(x, g * 0.5 * (1.0 + np.tanh(0.5 * x.data)))

    return make_node(np.logaddexp(0.0, x.data), (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        accumulate(x, 2.0 * g * x.data)

    return make_node(x.data * x.data, (x,), backward)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(x, np.broadcast_to(g, x.shape))

    return make_node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            accumulate(t, piece)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        accumulate(x, g.reshape(x.shape))

    return make_node(x.data.reshape(shape), (x,), backward)


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather ``table[idx]``; gradients scatter-add back into the rows."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            accumulate(table, full)

    return make_node(table.data[idx], (table,), backward)


def select(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick ``x[b, idx[b]]`` from a ``[B, K, ...]`` tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        accumulate(x, full)

    return make_node(x.data[rows, idx], (x,), backward)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float) -> Tensor:
    """Normalise over the last axis, then apply ``scale`` and ``shift``."""
    shape = x.shape
    x2 = x.data.reshape(-1, shape[-1])
    y, xhat, rstd = kernels.layer_norm_forward(x2, scale.data, shift.data, eps)

    def backward(g):
        gx, gscale, gshift = kernels.layer_norm_backward(
            np.ascontiguousarray(g).reshape(-1, shape[-1]), xhat, rstd, scale.data
        )
        accumulate(scale, gscale)
        accumulate(shift, gshift)
        accumulate(x, gx.reshape(shape))

    return make_node(y.reshape(shape), (x, scale, shift), backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(y)

    def backward(g):
        accumulate(x, g - probs * g.sum(axis=-1, keepdims=True))

    return make_node(y, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return make_node(y, (x,), backward)


def bronet(x: Tensor, net, head: bool = True) -> Tensor:
    """Whole residual MLP as one node (fused kernel); ``net`` is a BroNet."""
    x = as_tensor(x)
    blocks = net.blocks
    width = net.width
    if blocks:
        w1 = np.stack([b.fc1.weight.data for b in blocks])
        b1 = np.stack([b.fc1.bias.data for b in blocks])
        s1 = np.stack([b.ln1.scale.data for b in blocks])
        t1 = np.stack([b.ln1.shift.data for b in blocks])
        w2 = np.stack([b.fc2.weight.data for b in blocks])
        b2 = np.stack([b.fc2.bias.data for b in blocks])
        s2 = np.stack([b.ln2.scale.data for b in blocks])
        t2 = np.stack([b.ln2.shift.data for b in blocks])
    else:
        w1 = w2 = np.zeros((0, width, width))
        b1 = s1 = t1 = b2 = s2 = t2 = np.zeros((0, width))
    has_head = head and net.out_dim is not None
    if has_head:
        wh, bh = net.head.weight.data, net.head.bias.data
    else:
        wh, bh = np.zeros((width, 1)), np.zeros(1)
    eps = net.inp_ln.eps
    xd = np.ascontiguousarray(x.data)
    out, cache = _bronet_kernel.bronet_forward(
        xd, net.inp.weight.data, net.inp.bias.data, net.inp_ln.scale.data, net.inp_ln.shift.data,
        w1, b1, s1, t1, w2, b2, s2, t2, wh, bh, eps, has_head,
    )
    params = net.params
    parents = [x] + list(params.values())

    def backward(g):
        (gx, gwi, gbi, gsi, gti, gw1, gb1, gs1, gt1, gw2, gb2, gs2, gt2, gwh, gbh) = _bronet_kernel.bronet_backward(
            np.ascontiguousarray(g), xd, net.inp.weight.data, net.inp_ln.scale.data, w1, s1, w2, s2, wh,
            has_head, cache,
        )
        accumulate(x, gx)
        accumulate(net.inp.weight, gwi)
        accumulate(net.inp.bias, gbi)
        accumulate(net.inp_ln.scale, gsi)
        accumulate(net.inp_ln.shift, gti)
        for k, b in enumerate(blocks):
            accumulate(b.fc1.weight, gw1[k])
            accumulate(b.fc1.bias, gb1[k])
            accumulate(b.ln1.scale, gs1[k])
            accumulate(b.ln1.shift, gt1[k])
            accumulate(b.fc2.weight, gw2[k])
            accumulate(b.fc2.bias, gb2[k])
            accumulate(b.ln2.scale, gs2[k])
            accumulate(b.ln2.shift, gt2[k])
        if has_head:
            accumulate(net.head.weight, gwh)
            accumulate(net.head.bias, gbh)

    return make_node(out, parents, backward)
