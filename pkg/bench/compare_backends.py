"""Benchmark the numba kernels against the pure-numpy fallback.

Times the hot paths (TV/TGV forward solves, checkpointed backward passes,
cost-volume correlation, quadratic refinement) on both backends and
prints a speedup table.  The numba path is warmed up first so jit
compilation does not pollute the numbers.

    python bench/compare_backends.py [--size 64] [--iters 2000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from varflow import backend
from varflow.matching import correlate
from varflow.quadfit import quadfit_refine
from varflow.grid_io import FlowField, ScalarMap
from varflow.tv import SolverConfig, tv_backward, tv_forward
from varflow.tgv import tgv_backward, tgv_forward


def make_instance(size, seed=0):
    rng = np.random.default_rng(seed)
    shape = (size, size)
    return {
        "uhat": rng.standard_normal(shape),
        "c": np.where(rng.uniform(size=shape) < 0.05, rng.uniform(0.5, 1.0, shape), 0.0),
        "tw0": rng.uniform(0.2, 1.0, shape),
        "tw1": rng.uniform(0.2, 1.0, shape),
    }


def bench_one(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_workloads(size, iters, seed):
    inst = make_instance(size, seed)
    cfg = SolverConfig(delta=0.1, iters=iters)
    rng = np.random.default_rng(seed + 1)
    feat0 = rng.standard_normal((size // 2, size // 2, 16))
    feat1 = rng.standard_normal((size // 2, size // 2, 16))
    psi0 = rng.standard_normal((size, size, 16))
    psi1 = rng.standard_normal((size, size, 16))
    ubar = FlowField(np.zeros((size // 2, size // 2)), np.zeros((size // 2, size // 2)))

    def tv_fwd():
        tv_forward(inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg)

    def tv_fwd_bwd():
        uK, store = tv_forward(inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg)
        tv_backward(uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg)

    def tgv_fwd_bwd():
        uK, w0K, w1K, store = tgv_forward(
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], 1.0, cfg
        )
        tgv_backward(
            uK.copy(), w0K.copy(), w1K.copy(), store,
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], 1.0, cfg,
        )

    def costvol():
        correlate(feat0, feat1, 8)

    def quadfit():
        quadfit_refine(ScalarMap(psi0), ScalarMap(psi1), ubar)

    return {
        f"tv forward (K={iters})": tv_fwd,
        f"tv forward+backward (K={iters})": tv_fwd_bwd,
        f"tgv forward+backward (K={iters})": tgv_fwd_bwd,
        "correlate (d=8)": costvol,
        "quadfit refine": quadfit,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64, help="grid edge length")
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    results = {}
    names = ["numpy"]
    if backend._numba_available():
        names.append("numba")
    else:
        print("numba not available; timing the numpy path only")
    for name in names:
        backend.use(name)
        workloads = build_workloads(args.size, args.iters, args.seed)
        if name == "numba":
            for fn in workloads.values():  # compile everything first
                fn()
        results[name] = {k: bench_one(fn, args.repeat) for k, fn in workloads.items()}
    backend.use("auto")

    width = max(len(k) for k in results[names[0]])
    header = f"{'workload':<{width}}  " + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(f"\ngrid {args.size}x{args.size}, best of {args.repeat}\n")
    print(header)
    print("-" * len(header))
    for key in results[names[0]]:
        row = f"{key:<{width}}  "
        for n in names:
            row += f"{results[n][key] * 1e3:>10.1f}ms"
        if len(names) == 2:
            row += f"{results['numpy'][key] / results['numba'][key]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
