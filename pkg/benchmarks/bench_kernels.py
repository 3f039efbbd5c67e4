"""Benchmark the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--batch 256] [--features 64]
Prints per-kernel timings for both backends and the speedup, and verifies
that both produce bit-identical outputs on the benchmark inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gruq import _pykernels
from gruq.fxp import to_fixed_point

try:
    from gruq import _ckernels
except ImportError:
    _ckernels = None


def _inputs(rng, batch, features):
    q_x = rng.integers(-128, 128, size=(batch, features), dtype=np.int64)
    q_w = rng.integers(-127, 128, size=(features, features), dtype=np.int64)
    q_b = rng.integers(-(1 << 20), 1 << 20, size=features, dtype=np.int64)
    m = to_fixed_point(0.00137)
    return q_x, q_w, q_b, m


def bench(fn, *args, repeats=30):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        out = fn(*args)
    return (time.perf_counter() - start) / repeats, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--features", type=int, default=64)
    args = parser.parse_args()

    if _ckernels is None:
        print("compiled backend unavailable; nothing to compare")
        return

    rng = np.random.default_rng(7)
    q_x, q_w, q_b, m = _inputs(rng, args.batch, args.features)
    q2 = rng.integers(0, 256, size=q_x.shape, dtype=np.int64)
    table = np.arange(256, dtype=np.int64) - 128

    cases = [
        ("qlinear", (q_x, q_w, q_b, m.mantissa, m.shift, 3, -128, 127)),
        ("qadd", (q_x, q2, -5, 7, m.mantissa, m.shift, m.mantissa, m.shift,
                  2, -128, 127)),
        ("qmul", (q_x, q2, -5, 7, m.mantissa, m.shift, 2, -128, 127)),
        ("qcompl", (q2, 255, m.mantissa, m.shift, 0, 0, 255)),
        ("lut_apply", (q2, table, 8)),
        ("fxp_mul_arr", (q_x, m.mantissa, m.shift)),
    ]
    print(f"batch={args.batch} features={args.features}")
    print(f"{'kernel':<12} {'python':>12} {'cython':>12} {'speedup':>9}")
    for name, call_args in cases:
        t_py, out_py = bench(getattr(_pykernels, name), *call_args)
        t_cy, out_cy = bench(getattr(_ckernels, name), *call_args)
        assert np.array_equal(out_py, out_cy), f"{name}: backend mismatch"
        print(f"{name:<12} {t_py * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us "
              f"{t_py / t_cy:>8.1f}x")
    print("all kernels bit-identical across backends")


if __name__ == "__main__":
    main()
