"""Hot numeric kernels with a numba path and a pure-numpy path.

Each kernel exists twice: ``<name>_loop`` (written as explicit loops and
compiled with numba when ``BRC_NUMBA`` allows it) and ``<name>_numpy``
(vectorised numpy). The public name is bound to one of them at import.
``benchmarks/bench_kernels.py`` times both.
"""

import numpy as np

from brclab._accel import USE_NUMBA, njit

__all__ = [
    "USE_NUMBA",
    "categorical_projection",
    "discounted_returns",
    "nstep_returns",
    "bootstrap_means",
    "layer_norm_forward",
    "layer_norm_backward",
    "adamw_update",
]


# ---------------------------------------------------------------------------
# categorical projection


@njit
def categorical_projection_loop(atoms, probs, v_min, v_max, n_atoms):
    batch, k = atoms.shape
    out = np.zeros((batch, n_atoms))
    dz = (v_max - v_min) / (n_atoms - 1)
    for b in range(batch):
        for j in range(k):
            p = probs[b, j]
            x = atoms[b, j]
            if np.isnan(x):
                # poison the row so a downstream finiteness check fires
                out[b, 0] += np.nan
                continue
            if x < v_min:
                x = v_min
            elif x > v_max:
                x = v_max
            pos = (x - v_min) / dz
            lo = int(np.floor(pos))
            if lo >= n_atoms - 1:
                out[b, n_atoms - 1] += p
                continue
            frac = pos - lo
            if frac == 0.0:
                out[b, lo] += p
            else:
                out[b, lo] += p * (1.0 - frac)
                out[b, lo + 1] += p * frac
    return out


def categorical_projection_numpy(atoms, probs, v_min, v_max, n_atoms):
    batch, k = atoms.shape
    dz = (v_max - v_min) / (n_atoms - 1)
    pos = (np.clip(atoms, v_min, v_max) - v_min) / dz
    bad = np.isnan(pos)
    lo = np.minimum(np.floor(np.where(bad, 0.0, pos)).astype(np.int64), n_atoms - 1)
    frac = pos - lo  # nan for nan atoms, which lands on atom 0 as in the loop
    hi = np.minimum(lo + 1, n_atoms - 1)
    row = (np.arange(batch) * n_atoms)[:, None]
    size = batch * n_atoms
    out = np.bincount((row + lo).ravel(), weights=(probs * (1.0 - frac)).ravel(), minlength=size)
    out += np.bincount((row + hi).ravel(), weights=np.where(bad, 0.0, probs * frac).ravel(), minlength=size)
    return out.reshape(batch, n_atoms)


# ---------------------------------------------------------------------------
# Monte-Carlo returns of one episode


@njit
def discounted_returns_loop(rewards, discount, tail):
    n = rewards.shape[0]
    out = np.empty(n)
    acc = tail
    for t in range(n - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def discounted_returns_numpy(rewards, discount, tail):
    n = rewards.shape[0]
    # reversed cumulative sum of gamma^k r_k, rescaled by 1/gamma^t; the
    # rescaling amplifies rounding, so use the recurrence once gamma^n is small
    if n == 0 or n > 256 or discount ** (n - 1) < 1e-3:
        out = np.empty(n)
        acc = tail
        for t in range(n - 1, -1, -1):
            acc = rewards[t] + discount * acc
            out[t] = acc
        return out
    powers = discount ** np.arange(n)
    weighted = np.cumsum((rewards * powers)[::-1])[::-1]
    return weighted / powers + tail * discount ** (n - np.arange(n))


# ---------------------------------------------------------------------------
# n-step windows inside a ring buffer


@njit
def nstep_returns_loop(rewards, terminated, truncated, idx, oldest, size, capacity, n, discount):
    batch = idx.shape[0]
    ret = np.zeros(batch)
    last = np.empty(batch, dtype=np.int64)
    steps = np.empty(batch, dtype=np.int64)
    term = np.zeros(batch, dtype=np.bool_)
    for b in range(batch):
        i = idx[b]
        logical = (i - oldest) % capacity
        g = 0.0
        w = 1.0
        k = 0
        j = i
        while True:
            j = (i + k) % capacity
            g += w * rewards[j]
            w *= discount
            k += 1
            if terminated[j]:
                term[b] = True
                break
            if truncated[j] or k >= n or logical + k >= size:
                break
        ret[b] = g
        last[b] = j
        steps[b] = k
    return ret, last, steps, term


def nstep_returns_numpy(rewards, terminated, truncated, idx, oldest, size, capacity, n, discount):
    batch = idx.shape[0]
    logical = (idx - oldest) % capacity
    ret = np.zeros(batch)
    last = idx.copy()
    steps = np.zeros(batch, dtype=np.int64)
    term = np.zeros(batch, dtype=bool)
    alive = np.ones(batch, dtype=bool)
    w = 1.0
    for k in range(n):
        j = (idx + k) % capacity
        ret = np.where(alive, ret + w * rewards[j], ret)
        last = np.where(alive, j, last)
        steps = np.where(alive, k + 1, steps)
        hit_term = alive & terminated[j]
        term |= hit_term
        stop = hit_term | truncated[j] | (logical + k + 1 >= size)
        alive = alive & ~stop
        w *= discount
    return ret, last, steps, term


# ---------------------------------------------------------------------------
# bootstrap resample means


@njit
def bootstrap_means_loop(samples, idx):
    r, n = idx.shape
    out = np.empty(r)
    for i in range(r):
        s = 0.0
        for j in range(n):
            s += samples[idx[i, j]]
        out[i] = s / n
    return out


def bootstrap_means_numpy(samples, idx):
    return samples[idx].mean(axis=1)


# ---------------------------------------------------------------------------
# layer norm over the last axis of a 2-D array


@njit
def layer_norm_forward_loop(x, scale, shift, eps):
    rows, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows)
    for i in range(rows):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * scale[j] + shift[j]
    return y, xhat, rstd


def layer_norm_forward_numpy(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * scale + shift, xhat, rstd[:, 0]


@njit
def layer_norm_backward_loop(g, xhat, rstd, scale):
    rows, d = g.shape
    gx = np.empty_like(g)
    gscale = np.zeros(d)
    gshift = np.zeros(d)
    for i in range(rows):
        a = 0.0
        b = 0.0
        for j in range(d):
            gs = g[i, j] * scale[j]
            a += gs
            b += gs * xhat[i, j]
            gscale[j] += g[i, j] * xhat[i, j]
            gshift[j] += g[i, j]
        a /= d
        b /= d
        for j in range(d):
            gx[i, j] = rstd[i] * (g[i, j] * scale[j] - a - xhat[i, j] * b)
    return gx, gscale, gshift


def layer_norm_backward_numpy(g, xhat, rstd, scale):
    gs = g * scale
    r = rstd[:, None]
    gx = r * (gs - gs.mean(axis=-1, keepdims=True) - xhat * (gs * xhat).mean(axis=-1, keepdims=True))
    return gx, (g * xhat).sum(axis=0), g.sum(axis=0)


# ---------------------------------------------------------------------------
# fused AdamW step on flat buffers (in place)


@njit
def adamw_update_loop(theta, g, m, v, lr, beta1, beta2, eps, decay, bc1, bc2):
    step = lr / bc1
    for i in range(theta.shape[0]):
        gi = g[i]
        m[i] = m[i] * beta1 + (1.0 - beta1) * gi
        v[i] = v[i] * beta2 + (1.0 - beta2) * gi * gi
        if decay != 0.0:
            theta[i] = theta[i] - decay * theta[i]
        theta[i] = theta[i] - step * m[i] / (np.sqrt(v[i] / bc2) + eps)


def adamw_update_numpy(theta, g, m, v, lr, beta1, beta2, eps, decay, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    if decay != 0.0:
        theta -= decay * theta
    theta -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


if USE_NUMBA:
    categorical_projection = categorical_projection_loop
    discounted_returns = discounted_returns_loop
    nstep_returns = nstep_returns_loop
    bootstrap_means = bootstrap_means_loop
    layer_norm_forward = layer_norm_forward_loop
    layer_norm_backward = layer_norm_backward_loop
    adamw_update = adamw_update_loop
else:
    categorical_projection = categorical_projection_numpy
    discounted_returns = discounted_returns_numpy
    nstep_returns = nstep_returns_numpy
    bootstrap_means = bootstrap_means_numpy
    layer_norm_forward = layer_norm_forward_numpy
    layer_norm_backward = layer_norm_backward_numpy
    adamw_update = adamw_update_numpy
