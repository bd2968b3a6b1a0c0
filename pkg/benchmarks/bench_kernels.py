"""Time the numba and pure-numpy variants of every hot kernel.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``. The standalone
kernels are imported side by side (``<name>_loop`` compiled with numba,
``<name>_numpy`` plain numpy), checked for agreement, then timed on the same
inputs. The fused residual-MLP stack binds its helpers at import, so it is timed
once per mode in a subprocess with ``BRC_NUMBA`` set accordingly.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from brclab import kernels
from brclab._accel import USE_NUMBA


def _bronet_args(rng, batch, width, in_dim=12, blocks=2, out=101):
    def w(*shape):
        return rng.normal(size=shape) / np.sqrt(shape[-2] if len(shape) > 1 else 1)

    return (rng.normal(size=(batch, in_dim)), w(in_dim, width), np.zeros(width), np.ones(width), np.zeros(width),
            w(blocks, width, width), np.zeros((blocks, width)), np.ones((blocks, width)), np.zeros((blocks, width)),
            w(blocks, width, width), np.zeros((blocks, width)), np.ones((blocks, width)), np.zeros((blocks, width)),
            w(width, out), np.zeros(out), 1e-5, True)


def cases(rng):
    """``(name, loop_fn, numpy_fn, args)`` for each kernel at a representative size."""
    atoms = rng.uniform(-12, 12, size=(256, 101))
    probs = rng.dirichlet(np.ones(101), size=256)
    cap = 20_000
    rewards = rng.normal(size=cap)
    term = rng.random(cap) < 0.01
    trunc = (np.arange(cap) % 100 == 99) & ~term
    idx = rng.integers(0, cap, size=256)
    samples = rng.normal(size=40)
    boot_idx = rng.integers(0, 40, size=(2000, 40))
    x = rng.normal(size=(256, 256))
    scale, shift = rng.normal(size=256), rng.normal(size=256)
    _, xhat, rstd = kernels.layer_norm_forward_numpy(x, scale, shift, 1e-5)
    g = rng.normal(size=(256, 256))
    n_par = 200_000
    adam = (rng.normal(size=n_par), rng.normal(size=n_par), np.zeros(n_par), np.zeros(n_par),
            3e-4, 0.9, 0.999, 1e-8, 3e-8, 0.1, 0.001)
    return [
        ("categorical_projection", kernels.categorical_projection_loop, kernels.categorical_projection_numpy,
         (atoms, probs, -10.0, 10.0, 101)),
        ("discounted_returns", kernels.discounted_returns_loop, kernels.discounted_returns_numpy,
         (rewards[:100], 0.99, 0.0)),
        ("nstep_returns", kernels.nstep_returns_loop, kernels.nstep_returns_numpy,
         (rewards, term, trunc, idx, 0, cap, cap, 3, 0.99)),
        ("bootstrap_means", kernels.bootstrap_means_loop, kernels.bootstrap_means_numpy, (samples, boot_idx)),
        ("layer_norm_forward", kernels.layer_norm_forward_loop, kernels.layer_norm_forward_numpy,
         (x, scale, shift, 1e-5)),
        ("layer_norm_backward", kernels.layer_norm_backward_loop, kernels.layer_norm_backward_numpy,
         (g, xhat, rstd, scale)),
        ("adamw_update", kernels.adamw_update_loop, kernels.adamw_update_numpy, adam),
    ]


def _bronet_child(repeat):
    """Time the fused stack under the current ``BRC_NUMBA`` and print JSON."""
    from brclab import _bronet_kernel as bk

    rng = np.random.default_rng(0)
    args = _bronet_args(rng, 256, 256)
    out, cache = bk.bronet_forward(*args)
    g = rng.normal(size=out.shape)
    bwd = (g, args[0], args[1], args[3], args[5], args[7], args[9], args[11], args[13], True, cache)
    grads = bk.bronet_backward(*bwd)
    res = {
        "forward": min(timeit.repeat(lambda: bk.bronet_forward(*args), number=1, repeat=repeat)),
        "backward": min(timeit.repeat(lambda: bk.bronet_backward(*bwd), number=1, repeat=repeat)),
        "out": out.ravel().tolist()[:64] + grads[1].ravel().tolist()[:64],
    }
    print(json.dumps(res))


def run_bronet(repeat):
    """``(name, numba_s, numpy_s, max_diff)`` rows for the fused stack."""
    res = {}
    for flag in ("1", "0"):
        env = dict(os.environ, BRC_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--bronet-child", "--repeat", str(repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res[flag] = json.loads(proc.stdout.strip().splitlines()[-1])
    err = float(np.max(np.abs(np.subtract(res["1"]["out"], res["0"]["out"]))))
    return [(f"bronet_{k}", res["1"][k], res["0"][k], err) for k in ("forward", "backward")]


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def run(repeat: int = 20):
    rng = np.random.default_rng(0)
    rows = []
    for name, loop_fn, numpy_fn, args in cases(rng):
        copy = lambda: tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)  # noqa: E731
        t_np = min(timeit.repeat(lambda: numpy_fn(*copy()), number=1, repeat=repeat))
        a1, a2 = copy(), copy()
        r1, r2 = loop_fn(*a1), numpy_fn(*a2)
        if r1 is None:  # in-place kernel
            r1, r2 = a1[0], a2[0]
        err = float(np.max(np.abs(np.asarray(_first(r1)) - np.asarray(_first(r2)))))
        t_loop = min(timeit.repeat(lambda: loop_fn(*copy()), number=1, repeat=repeat))
        rows.append((name, t_loop, t_np, err))
    return rows + run_bronet(repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--bronet-child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.bronet_child:
        _bronet_child(args.repeat)
        return
    print(f"numba enabled: {USE_NUMBA}")
    print(f"{'kernel':<24}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, t_loop, t_np, err in run(args.repeat):
        print(f"{name:<24}{t_loop * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_loop:>8.1f}x{err:>11.2e}")


if __name__ == "__main__":
    main()
