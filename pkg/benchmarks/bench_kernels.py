"""Time the numba and numpy versions of each hot kernel.

    python3 benchmarks/bench_kernels.py [--sizes 100 500 1000] [--repeat 5]

The numba versions are compiled once before timing. The compiled and
interpreted results are also compared and the largest absolute gap printed.
"""
import argparse
import timeit

import numpy as np

from robustgp import _kernels as kk
from robustgp._accel import USE_NUMBA


def cases(n, d, rng):
    X = rng.normal(size=(n, d))
    Xs = rng.normal(size=(n, d))
    inv = 1.0 / rng.uniform(0.5, 2.0, size=d) ** 2
    G = rng.normal(size=(n, n))
    G = G + G.T
    K = kk._sqexp_cross_numpy(X, X, inv, 1.3)
    return {
        "sqexp_cross": (kk._sqexp_cross_numba, kk._sqexp_cross_numpy, (X, Xs, inv, 1.3)),
        "ard_traces": (kk._ard_traces_numba, kk._ard_traces_numpy, (X, inv, G * K)),
        "projection_scan": (kk._projection_scan_numba, kk._projection_scan_numpy,
                            (X, np.median(X, axis=0))),
    }


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def gap(a, b):
    a = a[0] if isinstance(a, tuple) else a
    b = b[0] if isinstance(b, tuple) else b
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000])
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("ROBUSTGP_NUMBA is off: the numba column runs interpreted code")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'n':>6}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}{'max gap':>11}")
    for n in args.sizes:
        for name, (fast, ref, a) in cases(n, args.dim, rng).items():
            out_fast = fast(*a)  # compile outside the timer
            out_ref = ref(*a)
            t_fast = best_of(fast, a, args.repeat)
            t_ref = best_of(ref, a, args.repeat)
            print(f"{name:<16}{n:>6}{1e3 * t_fast:>12.3f}{1e3 * t_ref:>12.3f}"
                  f"{t_ref / t_fast:>9.2f}{gap(out_fast, out_ref):>11.2e}")


if __name__ == "__main__":
    main()
