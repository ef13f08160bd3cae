"""Compare the compiled tridiagonal kernel with the sparse-LU fallback.

Usage::

    python benchmarks/bench_kernels.py [--paths 256] [--nt 1024] [--nx 65] [--repeat 3]
"""
import argparse
import time

import numpy as np

from spdedual import kernels
from spdedual.catalog import get_problem
from spdedual.dynamics import ControlField, solve_forward_paths
from spdedual.stochastic import sample_ensemble


def _best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--nt", type=int, default=1024)
    ap.add_argument("--nx", type=int, default=65)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    problem = get_problem("lq1d", {"nx": args.nx, "nt": args.nt})
    ensemble = sample_ensemble(problem.T, args.nt, args.paths, 1)
    control = ControlField.constant(problem, 0.3)
    work = args.paths * args.nt * args.nx
    print(f"{args.paths} paths x {args.nt} steps x {args.nx} nodes ({work / 1e6:.1f}M node-steps)")

    results = {}
    backends = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])
    for backend in backends:
        t, X = _best_time(lambda: solve_forward_paths(problem, control, ensemble, backend=backend), args.repeat)
        results[backend] = X
        print(f"  {backend:<9} {t:8.3f} s   {1e9 * t / work:6.2f} ns per node-step")
    if len(results) == 2:
        diff = np.max(np.abs(results["compiled"] - results["python"]))
        print(f"  max abs difference between backends: {diff:.2e}")
    else:
        print("  compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
