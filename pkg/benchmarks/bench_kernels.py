"""Time the numba and numpy kernel backends on comb-sized inputs.

    python benchmarks/bench_kernels.py [--sizes 1e4 1e5 1e6] [--repeat 5]

Each backend is warmed up once (JIT compilation) before timing; the best of
``--repeat`` runs is reported together with the numba speed-up and a check
that both backends agree bit for bit.
"""
import argparse
import time
import warnings

import numpy as np

warnings.filterwarnings("ignore", "The TBB threading layer")

from combraman import _kernels as K  # noqa: E402


def _inputs(n, rng):
    w = 2 * np.pi * (380e12 + rng.uniform(-5e12, 5e12, n))
    return w, rng.uniform(0, 1e6, n), rng.uniform(-np.pi, np.pi, n), 2 * np.pi * 411e12


def _best(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=float, nargs="+", default=[1e4, 1e5, 1e6])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>10}{'numpy [ms]':>14}{'numba [ms]':>14}{'speed-up':>10}  identical")
    for n in map(int, args.sizes):
        w, amp, dphi, w_res = _inputs(n, rng)
        cases = {
            "raman_pair_sum": lambda b: K.raman_pair_sum(w, amp, dphi, w_res, backend=b),
            "stark_sum": lambda b: K.stark_sum(w, amp, w_res, 1.0, backend=b),
            "tree_sum": lambda b: K.tree_sum(amp, backend=b),
        }
        for name, fn in cases.items():
            t_np = _best(lambda: fn("numpy"), args.repeat)
            t_nb = _best(lambda: fn("numba"), args.repeat)
            same = fn("numpy") == fn("numba")
            print(f"{name:<16}{n:>10}{1e3 * t_np:>14.3f}{1e3 * t_nb:>14.3f}{t_np / t_nb:>10.1f}  {same}")


if __name__ == "__main__":
    main()
