"""Fused forward/backward of the residual MLP.

One call runs the whole stack (input Dense-LN-ReLU, residual blocks, optional
linear head) and returns the activations the backward pass needs. The same
source is compiled with numba or run as plain numpy (``BRC_NUMBA=0``).
"""

import numpy as np

from brclab._accel import USE_NUMBA, njit
from brclab.kernels import (
    layer_norm_backward_loop,
    layer_norm_backward_numpy,
    layer_norm_forward_loop,
    layer_norm_forward_numpy,
)


def _colsum_numpy(a):
    return a.sum(axis=0)


@njit
def _colsum_loop(a):
    out = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]
    return out


def _put_numpy(dst, k, src):
    dst[k] = src


@njit
def _put_loop(dst, k, src):
    # numba's generic dst[k] = src is several times slower than this loop
    for i in range(src.shape[0]):
        for j in range(src.shape[1]):
            dst[k, i, j] = src[i, j]


# helpers resolved as globals, so numba can cache the compiled stack
if USE_NUMBA:
    _ln_fwd, _ln_bwd, _colsum, _put = layer_norm_forward_loop, layer_norm_backward_loop, _colsum_loop, _put_loop
else:
    _ln_fwd, _ln_bwd, _colsum, _put = layer_norm_forward_numpy, layer_norm_backward_numpy, _colsum_numpy, _put_numpy


def bronet_forward_py(x, wi, bi, si, ti, w1, b1, s1, t1, w2, b2, s2, t2, wh, bh, eps, has_head):
    batch = x.shape[0]
    width = wi.shape[1]
    nb = w1.shape[0]
    z = np.dot(x, wi) + bi
    y0, xhat0, rstd0 = _ln_fwd(z, si, ti, eps)
    h = np.maximum(y0, 0.0)
    hin = np.empty((nb, batch, width))
    xhat1 = np.empty((nb, batch, width))
    rstd1 = np.empty((nb, batch))
    r = np.empty((nb, batch, width))
    xhat2 = np.empty((nb, batch, width))
    rstd2 = np.empty((nb, batch))
    for k in range(nb):
        _put(hin, k, h)
        u = np.dot(h, w1[k]) + b1[k]
        y1, xh1, rs1 = _ln_fwd(u, s1[k], t1[k], eps)
        _put(xhat1, k, xh1)
        rstd1[k] = rs1
        rk = np.maximum(y1, 0.0)
        _put(r, k, rk)
        v = np.dot(rk, w2[k]) + b2[k]
        y2, xh2, rs2 = _ln_fwd(v, s2[k], t2[k], eps)
        _put(xhat2, k, xh2)
        rstd2[k] = rs2
        h = h + y2
    if has_head:
        out = np.dot(h, wh) + bh
    else:
        out = h.copy()
    return out, (y0, xhat0, rstd0, hin, xhat1, rstd1, r, xhat2, rstd2, h)

def bronet_backward_py(g, x, wi, si, w1, s1, w2, s2, wh, has_head, cache):
    y0, xhat0, rstd0, hin, xhat1, rstd1, r, xhat2, rstd2, h = cache
    nb = w1.shape[0]
    width = wi.shape[1]
    if has_head:
        gwh = np.dot(h.T, g)
        gbh = _colsum(g)
        gh = np.dot(g, wh.T)
    else:
        gwh = np.zeros(wh.shape)
        gbh = np.zeros(wh.shape[1])
        gh = g.copy()
    gw1 = np.zeros(w1.shape)
    gb1 = np.zeros((nb, width))
    gs1 = np.zeros((nb, width))
    gt1 = np.zeros((nb, width))
    gw2 = np.zeros(w2.shape)
    gb2 = np.zeros((nb, width))
    gs2 = np.zeros((nb, width))
    gt2 = np.zeros((nb, width))
    for k in range(nb - 1, -1, -1):
        gv, gs2k, gt2k = _ln_bwd(gh, xhat2[k], rstd2[k], s2[k])
        gs2[k] = gs2k
        gt2[k] = gt2k
        _put(gw2, k, np.dot(r[k].T, gv))
        gb2[k] = _colsum(gv)
        gr = np.dot(gv, w2[k].T) * (r[k] > 0.0)
        gu, gs1k, gt1k = _ln_bwd(gr, xhat1[k], rstd1[k], s1[k])
        gs1[k] = gs1k
        gt1[k] = gt1k
        _put(gw1, k, np.dot(hin[k].T, gu))
        gb1[k] = _colsum(gu)
        gh = gh + np.dot(gu, w1[k].T)
    gy0 = gh * (y0 > 0.0)
    gz, gsi, gti = _ln_bwd(gy0, xhat0, rstd0, si)
    gwi = np.dot(x.T, gz)
    gbi = _colsum(gz)
    gx = np.dot(gz, wi.T)
    return gx, gwi, gbi, gsi, gti, gw1, gb1, gs1, gt1, gw2, gb2, gs2, gt2, gwh, gbh


if USE_NUMBA:
    bronet_forward = njit(bronet_forward_py)
    bronet_backward = njit(bronet_backward_py)
else:
    bronet_forward, bronet_backward = bronet_forward_py, bronet_backward_py
