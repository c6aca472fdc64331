#!/usr/bin/env python3
"""Throughput check for connected-component labeling on phantom volumes.

    python scripts/benchmark_labeling.py [--conn 26] [--repeats 3]
"""

import argparse
import time

from pvseval.ccl import label_components
from pvseval.phantom import PhantomSpec, generate

GRIDS = [(64, 64, 64), (128, 128, 128), (256, 256, 160), (320, 300, 208)]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--conn", type=int, default=26, choices=[6, 18, 26])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"{'grid':>16s} {'fg voxels':>10s} {'clusters':>9s} {'best (s)':>9s}")
    for dims in GRIDS:
        n_tubes = max(4, dims[0] // 10)
        spec = PhantomSpec(dims=dims, n_tubes=n_tubes,
                           length_range=(12.0, 30.0), seed=1)
        _, truth, _ = generate(spec)
        best = min(
            _timed(lambda: label_components(truth, args.conn))
            for _ in range(args.repeats)
        )
        lm = label_components(truth, args.conn)
        grid = "x".join(map(str, dims))
        print(f"{grid:>16s} {truth.foreground_count:>10d} "
              f"{lm.component_count:>9d} {best:>9.3f}")


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


if __name__ == "__main__":
    main()
