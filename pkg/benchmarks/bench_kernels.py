"""Compare the numba kernels against the pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The numba path pays a one-off JIT compile per kernel signature; a warmup
call absorbs it before timing.
"""

import argparse
import time

import numpy as np

from lpnet.kernels import numpy_ops

try:
    from lpnet.kernels import numba_ops
except ImportError:
    numba_ops = None


def timeit(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile for numba)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    T, d, k, H, N, l = 64, 256, 7, 128, 300, 16
    x = rng.standard_normal((T, d))
    w = rng.standard_normal((k, d, d)) * 0.05
    dy = rng.standard_normal((T, d))
    wx = rng.standard_normal((d, 4 * H)) * 0.05
    wh = rng.standard_normal((H, 4 * H)) * 0.05
    b = np.zeros(4 * H)
    h, c, gates = numpy_ops.lstm_forward(x, wx, wh, b)
    dh = rng.standard_normal((T, H))
    starts = rng.uniform(0, 0.5, N)
    ends = starts + rng.uniform(0.05, 0.5, N)
    ends = np.minimum(ends, 1.0)
    droi = rng.standard_normal((N, l, d))
    return [
        ("conv1d_forward", (x, w)),
        ("conv1d_backward", (x, w, dy)),
        ("lstm_forward", (x, wx, wh, b)),
        ("lstm_backward", (x, wx, wh, h, c, gates, dh)),
        ("roialign_forward", (x, starts, ends, l)),
        ("roialign_backward", (T, starts, ends, l, droi)),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, call_args in cases(rng):
        t_np = timeit(getattr(numpy_ops, name), call_args, args.repeats)
        if numba_ops is None:
            print(f"{name:<20} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>9}")
            continue
        t_nb = timeit(getattr(numba_ops, name), call_args, args.repeats)
        print(f"{name:<20} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
