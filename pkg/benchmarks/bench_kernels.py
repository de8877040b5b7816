#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the three convolution kernels on the layer shapes the default
network actually runs, plus the histogram bin-deposit kernel at
simulation scale, and cross-checks that both backends agree bin for bin.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--batch B]
"""

import argparse
import time

import numpy as np

from nlosid.kernels import _pykernels, available_backends, conv1d_output_length

# (label, in_channels, length, out_channels, width, stride): the two conv
# layers of the default 250-bin network.
CONV_CASES = [
    ("conv 1x250 -> 16, w9/s2", 1, 250, 16, 9, 2),
    ("conv 16x121 -> 32, w5/s2", 16, 121, 32, 5, 2),
]
DEPOSIT_EVENTS = 200_000
DEPOSIT_BINS = 250


def timeit(fn, repeats):
    fn()
    def once():
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0
    return min(once() for _ in range(repeats))


def bench_backend(impl, batch, repeats, rng):
    rows = []
    for label, in_ch, length, out_ch, width, stride in CONV_CASES:
        x = rng.random((batch, in_ch, length))
        kernels = rng.random((out_ch, in_ch, width))
        l_out = conv1d_output_length(length, width, stride)
        gy = rng.random((batch, out_ch, l_out))
        rows.append((f"{label} forward",
                     timeit(lambda: impl.conv1d_forward(x, kernels, stride),
                            repeats)))
        rows.append((f"{label} grad-input",
                     timeit(lambda: impl.conv1d_grad_input(gy, kernels, stride,
                                                           length), repeats)))
        rows.append((f"{label} grad-kernels",
                     timeit(lambda: impl.conv1d_grad_kernels(x, gy, stride,
                                                             width), repeats)))
    indices = rng.integers(0, DEPOSIT_BINS, DEPOSIT_EVENTS)
    weights = rng.random(DEPOSIT_EVENTS)
    rows.append((f"deposit {DEPOSIT_EVENTS} events",
                 timeit(lambda: impl.deposit_bins(indices, weights,
                                                  DEPOSIT_BINS), repeats)))
    return rows


def check_agreement(c_impl, batch, rng):
    worst = 0.0
    for _, in_ch, length, out_ch, width, stride in CONV_CASES:
        x = rng.random((batch, in_ch, length))
        kernels = rng.random((out_ch, in_ch, width))
        a = c_impl.conv1d_forward(x, kernels, stride)
        b = _pykernels.conv1d_forward(x, kernels, stride)
        worst = max(worst, float(np.abs(a - b).max() / np.abs(b).max()))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()

    backends = available_backends()
    print(f"available backends: {', '.join(backends)}")
    rng = np.random.default_rng(0)
    results = {}
    if "c" in backends:
        from nlosid.kernels import _ckernels
        results["c"] = bench_backend(_ckernels, args.batch, args.repeats, rng)
        drift = check_agreement(_ckernels, args.batch,
                                np.random.default_rng(1))
        print(f"cross-check max relative difference: {drift:.2e}")
    results["python"] = bench_backend(_pykernels, args.batch, args.repeats,
                                      rng)

    labels = [label for label, _ in results["python"]]
    width = max(len(l) for l in labels) + 2
    header = f"{'kernel':<{width}}" + "".join(f"{b:>12}" for b in results)
    if len(results) == 2:
        header += f"{'c/python':>10}"
    print(header)
    for i, label in enumerate(labels):
        cells = "".join(f"{results[b][i][1] * 1e3:>10.3f}ms" for b in results)
        line = f"{label:<{width}}{cells}"
        if len(results) == 2:
            ratio = results["c"][i][1] / results["python"][i][1]
            line += f"{ratio:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
