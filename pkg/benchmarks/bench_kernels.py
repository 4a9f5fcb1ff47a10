"""Time the compiled and pure-Python assignment solvers on matching-sized problems.

Usage::

    python benchmarks/bench_kernels.py [--repeats 20] [--json out.json]

Shapes follow the training loop: one row per ground-truth point, one column
per proposal slot (16x16 cells x 4 slots for a 128 px crop at stride 8).
Both backends must return identical assignments; the script exits non-zero
otherwise.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from pointda._core import fallback

try:
    from pointda._core import _lsa
except ImportError:
    _lsa = None

SHAPES = [(5, 64), (15, 256), (15, 1024), (50, 1024), (100, 4096)]


def bench(shape, repeats, rng):
    cost = np.ascontiguousarray(rng.random(shape))
    out = {"shape": list(shape)}
    backends = {"python": fallback.solve_rows}
    if _lsa is not None:
        backends["compiled"] = _lsa.solve_rows
    results = {}
    for name, fn in backends.items():
        results[name] = fn(cost)
        out[name] = min(timeit.repeat(lambda: fn(cost), number=1, repeat=repeats))
    if "compiled" in results:
        out["identical"] = bool(np.array_equal(results["python"], results["compiled"]))
        out["speedup"] = out["python"] / out["compiled"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    rows = [bench(s, args.repeats, rng) for s in SHAPES]
    print(f"{'shape':>12} {'python [s]':>12} {'compiled [s]':>13} {'speedup':>8}")
    for r in rows:
        shape = "x".join(map(str, r["shape"]))
        comp = f"{r['compiled']:13.2e}" if "compiled" in r else f"{'n/a':>13}"
        speed = f"{r['speedup']:7.1f}x" if "speedup" in r else f"{'':>8}"
        print(f"{shape:>12} {r['python']:12.2e} {comp} {speed}")
    if _lsa is None:
        print("compiled extension not built; only the fallback was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("identical", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
