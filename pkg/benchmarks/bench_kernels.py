"""Benchmark the numba-compiled kernels against their pure-numpy fallbacks.

The two paths are selected by the ``ATTNMIL_DISABLE_NUMBA`` environment
variable, which is read at import time, so this script re-executes itself in a
subprocess for the fallback measurements.

Usage::

    python3 benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def bench_accumulate(kernels, rng, repeats):
    w = h = 1024
    n = 1000
    xs = rng.integers(0, w - 64, n).astype(np.int64)
    ys = rng.integers(0, h - 64, n).astype(np.int64)
    scores = rng.random(n)
    best = np.inf
    for _ in range(repeats):
        score_sum = np.zeros((h, w))
        hit_count = np.zeros((h, w), dtype=np.int64)
        t0 = time.perf_counter()
        kernels.accumulate_footprints(score_sum, hit_count, xs, ys, 64, h, scores)
        best = min(best, time.perf_counter() - t0)
    return best, float(score_sum.sum())


def bench_smooth_hinge(kernels, rng, repeats):
    logits = rng.normal(size=(20_000, 2))
    labels = rng.integers(0, 2, 20_000)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        losses, grads = kernels.batch_smooth_hinge(logits, labels, 1.0, 1.0)
        best = min(best, time.perf_counter() - t0)
    return best, float(losses.sum() + grads.sum())


def bench_adam(kernels, rng, repeats):
    theta = rng.normal(size=500_000)
    grad = rng.normal(size=theta.size)
    best = np.inf
    for _ in range(repeats):
        th = theta.copy()
        m = np.zeros_like(th)
        v = np.zeros_like(th)
        t0 = time.perf_counter()
        kernels.adam_update(th, grad, m, v, 1, 2e-4, 0.9, 0.999, 1e-8, 1e-5)
        best = min(best, time.perf_counter() - t0)
    return best, float(th.sum())


BENCHES = {
    "accumulate_footprints": bench_accumulate,
    "batch_smooth_hinge": bench_smooth_hinge,
    "adam_update": bench_adam,
}


def run_all(repeats=7):
    from attnmil import kernels
    from attnmil.linalg import make_rng

    results = {}
    for name, fn in BENCHES.items():
        fn(kernels, make_rng(0), 1)  # warm-up (JIT compilation)
        seconds, checksum = fn(kernels, make_rng(0), repeats)
        results[name] = {"seconds": seconds, "checksum": checksum}
    return {"numba": kernels.using_numba(), "results": results}


def main():
    if "--subprocess" in sys.argv:
        print(json.dumps(run_all()))
        return

    here = run_all()
    env = dict(os.environ, ATTNMIL_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--subprocess"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    other = json.loads(out.stdout.strip().splitlines()[-1])
    fast, slow = (here, other) if here["numba"] else (other, here)
    if not fast["numba"]:
        print("numba unavailable; measured the numpy fallback twice")

    print(f"{'kernel':<24} {'numba':>10} {'numpy':>10} {'speedup':>8}  checksums")
    for name in BENCHES:
        a = fast["results"][name]
        b = slow["results"][name]
        match = "match" if np.isclose(a["checksum"], b["checksum"], rtol=1e-12) else "DIFFER"
        print(
            f"{name:<24} {a['seconds'] * 1e3:>8.2f}ms {b['seconds'] * 1e3:>8.2f}ms"
            f" {b['seconds'] / a['seconds']:>7.1f}x  {match}"
        )


if __name__ == "__main__":
    main()
