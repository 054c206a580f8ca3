#!/usr/bin/env python3
"""Times the compiled kernels against the numpy fallback.

Imports both implementations directly (no backend selection involved) and
reports best-of-N wall times on pipeline-shaped inputs plus a larger size
per kernel so the scaling difference is visible.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from capseg import _kernels_py

try:
    from capseg import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)

    for h, w, n_labels in ((32, 32, 8), (128, 128, 16)):
        q = rng.random((h, w, n_labels))
        taps = rng.random((3, 3))
        yield (
            f"blur_field     {h}x{w}x{n_labels}",
            lambda m, q=q, taps=taps: m.blur_field(q, taps),
        )

    for h, w, n_labels in ((32, 32, 8), (256, 256, 16)):
        labels = rng.integers(0, n_labels, size=(h, w)).astype(np.int32)
        yield (
            f"majority_pass  {h}x{w} ({n_labels} labels)",
            lambda m, labels=labels, n=n_labels: m.majority_pass(labels, n),
        )

    for n, dim, k in ((1024, 256, 8), (16384, 256, 16)):
        x = rng.normal(size=(n, dim))
        centers = rng.normal(size=(k, dim))
        yield (
            f"assign_points  {n}x{dim} -> {k}",
            lambda m, x=x, c=centers: m.assign_points(x, c),
        )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats, best wins")
    args = parser.parse_args(argv)

    if _compiled is None:
        print("compiled extension not available; nothing to compare")
        return 1

    name_w = 36
    print(f"{'kernel':<{name_w}}  {'compiled':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, call in cases():
        call(_compiled)  # warm both paths before timing
        call(_kernels_py)
        fast = best_of(lambda: call(_compiled), args.repeat)
        slow = best_of(lambda: call(_kernels_py), args.repeat)
        print(
            f"{name:<{name_w}}  {fast * 1e3:>8.3f}ms  {slow * 1e3:>8.3f}ms"
            f"  {slow / fast:>7.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
