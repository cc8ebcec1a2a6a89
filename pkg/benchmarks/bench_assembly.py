"""Compare the compiled and numpy cores on full Galerkin assembly.

Usage::

    python benchmarks/bench_assembly.py [--levels 1 2] [--repeat 3]

For each icosphere level both backends assemble the scalar and vector
blocks at ``kappa = 1``; the script prints the best wall time of each, the
speed-up and the largest entry difference.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from shellspec._backend import get_core
from shellspec.assembly import Assembler
from shellspec.mesh import generate_icosphere


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=1.0)
    args = ap.parse_args(argv)
    try:
        get_core("cython")
        backends = ["python", "cython"]
    except ImportError:
        print("compiled core not built; timing the numpy core only")
        backends = ["python"]
    print(f"{'level':>5} {'panels':>7} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + f" {'speed-up':>9} {'max diff':>10}")
    for lv in args.levels:
        mesh = generate_icosphere(1.0, lv)
        times, blocks = {}, {}
        for b in backends:
            # a fresh assembler each time so nothing is cached between repeats
            times[b], blocks[b] = best_time(lambda: Assembler(mesh, backend=b).blocks(args.kappa), args.repeat)
        line = f"{lv:>5} {mesh.n_panels:>7} " + " ".join(f"{times[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            p, c = blocks["python"], blocks["cython"]
            diff = max(np.max(np.abs(p.scalar - c.scalar)), np.max(np.abs(p.vector - c.vector)))
            line += f" {times['python'] / times['cython']:>9.2f} {diff:>10.2e}"
        print(line)


if __name__ == "__main__":
    main()
