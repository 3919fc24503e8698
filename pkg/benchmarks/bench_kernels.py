#!/usr/bin/env python3
"""Timing comparison of the numba and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

The backend is fixed at import time by STACKPARSE_BACKEND, so the
driver re-executes itself once per backend and prints a combined
table.  Shapes mirror a desk-scale training step: batch 32, 4 heads,
around 40 decoder steps, 72 encoder positions, d_model 128.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeats):
    fn()  # warm-up triggers jit compilation on the numba path
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_worker(repeats):
    from stackparse import kernels

    rng = np.random.default_rng(0)
    rows, cols = 32 * 4 * 40, 72
    scores = rng.standard_normal((rows, cols)).astype(np.float32)
    mask = rng.random((rows, cols)) < 0.4
    mask[:, 0] = True  # no all-excluded rows
    probs = kernels.masked_softmax(scores, mask)
    dprobs = rng.standard_normal(probs.shape).astype(np.float32)

    x = rng.standard_normal((32 * 40, 128)).astype(np.float32)
    gain = np.ones(128, dtype=np.float32)
    bias = np.zeros(128, dtype=np.float32)
    y, xhat, rstd = kernels.layer_norm(x, gain, bias)
    dy = rng.standard_normal(x.shape).astype(np.float32)

    n = 1 << 20
    param = rng.standard_normal(n).astype(np.float32)
    grad = rng.standard_normal(n).astype(np.float32)
    m = np.zeros(n, dtype=np.float32)
    v = np.zeros(n, dtype=np.float32)

    timings = {
        "masked_softmax": best_of(
            lambda: kernels.masked_softmax(scores, mask), repeats),
        "masked_softmax_grad": best_of(
            lambda: kernels.masked_softmax_grad(probs, dprobs), repeats),
        "layer_norm": best_of(
            lambda: kernels.layer_norm(x, gain, bias), repeats),
        "layer_norm_grad": best_of(
            lambda: kernels.layer_norm_grad(dy, xhat, rstd, gain), repeats),
        "adam_step": best_of(
            lambda: kernels.adam_step(param, grad, m, v, 1e-3, 0.9, 0.98,
                                      1e-8, 1), repeats),
    }
    print(json.dumps({"backend": kernels.BACKEND, "timings": timings}))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        run_worker(args.repeats)
        return

    results = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, STACKPARSE_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True)
        payload = json.loads(proc.stdout.splitlines()[-1])
        assert payload["backend"] == backend
        results[backend] = payload["timings"]

    width = max(len(k) for k in results["numpy"])
    print(f"{'kernel':<{width}}  {'numpy ms':>10}  {'numba ms':>10}  "
          f"{'speedup':>8}")
    for name in results["numpy"]:
        t_np = results["numpy"][name] * 1e3
        t_nb = results["numba"][name] * 1e3
        print(f"{name:<{width}}  {t_np:>10.3f}  {t_nb:>10.3f}  "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
