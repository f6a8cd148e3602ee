"""Time the dual-basis kernels on the numba and numpy paths.

    python benchmarks/bench_kernels.py [--sizes 4 8 16] [--repeats 5]

Prints one row per (kernel, size, backend) with the median seconds per call,
the speed-up over numpy, and the largest output difference between backends.
An end-to-end compression is timed on both paths at the end.
"""

import argparse
import time

from mpdo_approx.benchmark import kernel_backend, run_benchmark
from mpdo_approx.compressor import compress
from mpdo_approx.models import tfim_gibbs


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--n-sites", type=int, default=6, help="chain length of the end-to-end run")
    args = p.parse_args()

    rows = run_benchmark(tuple(args.sizes), args.repeats)
    ref = {(r["kernel"], r["n"]): r["seconds"] for r in rows if r["backend"] == "numpy"}
    print(f"{'kernel':<24} {'n':>3} {'D':>3} {'backend':<7} {'seconds':>10} {'speedup':>8} {'diff':>9}")
    for r in rows:
        speed = ref[(r["kernel"], r["n"])] / r["seconds"]
        print(f"{r['kernel']:<24} {r['n']:>3} {r['D']:>3} {r['backend']:<7} {r['seconds']:>10.3e} "
              f"{speed:>8.2f} {r['max_abs_diff']:>9.1e}")

    rho = tfim_gibbs(args.n_sites, 1.0)
    for backend in ("numpy", "numba"):
        with kernel_backend(backend):
            compress(rho, 2)  # warm-up
            t0 = time.perf_counter()
            rep = compress(rho, 2)[1]
            dt = time.perf_counter() - t0
        print(f"compress N={args.n_sites} D_p=2 [{rep.backend}]: {dt:.3f} s, eps {rep.eps_measured:.3e}")


if __name__ == "__main__":
    main()
