"""Time the compiled kernels against the numpy fallback on scan-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from lidarfeat._kernels import available_backends


def cases(rng, H=64, W=1024):
    scores = rng.random((H, W))
    n = 60000
    rows, cols = rng.integers(0, H, n), rng.integers(0, W, n)
    ranges = rng.uniform(1, 60, n)
    chans = rng.random((2, H, W))
    valid = rng.random((H, W)) > 0.05
    V, U = np.mgrid[0:H, 0:W].astype(float)
    su, sv = (U * 0.9 + 17.3) % W, V * 0.95 + 0.4
    return {
        "nms_mask": lambda k: k.nms_mask(scores, 0.7, 8),
        "scatter_nearest": lambda k: k.scatter_nearest(rows, cols, ranges, H, W),
        "masked_bilinear": lambda k: k.masked_bilinear(chans, valid, su, sv),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the fallback only", file=sys.stderr)
    results = {}
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {}
        for bname, mod in backends.items():
            fn(mod)  # warm-up
            row[bname] = 1e3 * min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        results[name] = row
        speed = f"  x{row['python'] / row['cython']:.1f}" if "cython" in row else ""
        print(f"{name:16s}" + "".join(f"  {b} {ms:8.2f} ms" for b, ms in row.items()) + speed)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
