"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--grid 125x106] [--firms 10000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from firmsim import _pykernels
from firmsim.spatial import disc_offsets

try:
    from firmsim import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_scatter(mod, nrows, ncols, mass, radius, repeat):
    dr, dc, w = disc_offsets(radius, nrows, ncols, 1.0)
    r, c = np.nonzero(mass)
    vals = mass[r, c].astype(np.float64)
    r, c = r.astype(np.int64), c.astype(np.int64)

    def go():
        out = np.zeros((nrows, ncols))
        mod.scatter_offsets(out, r, c, vals, dr, dc, w)
        return out

    return _time(go, repeat)


def bench_best_cell(mod, base, occ, ncols, n_calls, repeat):
    rng = np.random.default_rng(1)
    origins = rng.integers(0, base.size, n_calls)

    def go():
        return [mod.best_cell(base, occ, ncols, int(o % ncols), int(o // ncols), -0.01, 1.0, bool(k & 1), 0.5)
                for k, o in enumerate(origins)]

    return _time(go, repeat)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", default="125x106")
    ap.add_argument("--firms", type=int, default=10000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--calls", type=int, default=500)
    a = ap.parse_args()
    ncols, nrows = (int(x) for x in a.grid.split("x"))
    rng = np.random.default_rng(0)
    mass = np.zeros((nrows, ncols))
    np.add.at(mass, (rng.integers(0, nrows, a.firms), rng.integers(0, ncols, a.firms)), 1.0)
    base = rng.standard_normal(nrows * ncols)
    occ = (mass.reshape(-1) > 0).astype(np.int64)

    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"grid {ncols}x{nrows}, {a.firms} firms, {int(occ.sum())} occupied cells")
    results = {}
    for radius in (5.0, 23.0, 69.0):
        for name, mod in backends:
            t, out = bench_scatter(mod, nrows, ncols, mass, radius, a.repeat)
            results[("scatter", radius, name)] = out
            print(f"scatter R={radius:>5}: {name:>6} {t * 1e3:9.2f} ms")
        if _ckernels:
            same = np.array_equal(results[("scatter", radius, "python")], results[("scatter", radius, "cython")])
            print(f"  backends bit-identical: {same}")
    for name, mod in backends:
        t, out = bench_best_cell(mod, base, occ, ncols, a.calls, a.repeat)
        results[("best", name)] = out
        print(f"best_cell x{a.calls}: {name:>6} {t * 1e3:9.2f} ms")
    if _ckernels:
        print(f"  backends agree: {results[('best', 'python')] == results[('best', 'cython')]}")


if __name__ == "__main__":
    main()
