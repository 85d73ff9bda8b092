#!/usr/bin/env python3
"""Benchmark the depthwise-conv backends (compiled vs pure numpy).

Times forward and backward passes over a sweep of grid sizes and checks
that both backends agree to machine precision. Run from the repo root:

    python3 benchmarks/bench_conv.py
"""

import argparse
import time

import numpy as np

from prmim.numerics import _conv_numpy
from prmim.numerics.convolution import BACKEND

try:
    from prmim.numerics import _conv_cy
except ImportError:
    _conv_cy = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(channels, side, kernel_size, repeats, rng):
    x = rng.normal(size=(channels, side, side))
    kernel = rng.normal(size=(channels, kernel_size, kernel_size))
    bias = rng.normal(size=channels)
    gout = rng.normal(size=x.shape)

    rows = []
    impls = [("numpy", _conv_numpy)]
    if _conv_cy is not None:
        impls.append(("cython", _conv_cy))
    outs = {}
    for name, impl in impls:
        fwd = _time(lambda: impl.conv_forward(x, kernel, bias), repeats)
        bwd = _time(lambda: impl.conv_backward(x, kernel, gout), repeats)
        outs[name] = (np.asarray(impl.conv_forward(x, kernel, bias)),
                      tuple(np.asarray(g) for g in impl.conv_backward(x, kernel, gout)))
        rows.append((name, fwd, bwd))
    if len(outs) == 2:
        gap = np.max(np.abs(outs["numpy"][0] - outs["cython"][0]))
        for a, b in zip(outs["numpy"][1], outs["cython"][1]):
            gap = max(gap, np.max(np.abs(a - b)))
        assert gap <= 1e-12, f"backend mismatch: {gap}"
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--kernel", type=int, default=3)
    args = parser.parse_args()

    print(f"default backend at import: {BACKEND}")
    if _conv_cy is None:
        print("compiled extension not available; timing numpy only")
    rng = np.random.Generator(np.random.PCG64(0))
    print(f"{'case':>14}  {'backend':>7}  {'fwd (us)':>10}  {'bwd (us)':>10}  {'speedup':>8}")
    for channels, side in [(16, 8), (16, 14), (64, 14), (512, 14), (512, 28)]:
        rows = bench_case(channels, side, args.kernel, args.repeats, rng)
        base_fwd = rows[0][1]
        for name, fwd, bwd in rows:
            speed = f"{base_fwd / fwd:6.2f}x" if name != "numpy" else "       "
            print(f"{channels:>4}x{side:>2}x{side:<2} k{args.kernel}  {name:>7}  "
                  f"{fwd * 1e6:10.1f}  {bwd * 1e6:10.1f}  {speed:>8}")


if __name__ == "__main__":
    main()
