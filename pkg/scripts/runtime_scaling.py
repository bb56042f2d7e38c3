#!/usr/bin/env python3
"""Measure inference wall-clock against instance size and fit a line."""
from __future__ import annotations

import argparse

from crfmap.cli import run_bench


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="50,250,500,1000,2000")
    parser.add_argument("--sims", type=int, default=20)
    parser.add_argument("--depth", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rows, (slope, intercept, r2), _greedy, _searched = run_bench(
        None, sizes, args.seed, args.sims, args.depth
    )
    print(f"{'engine':<8} {'size':>6} {'seconds':>10}")
    for engine, size, seconds in rows:
        print(f"{engine:<8} {size:>6} {seconds:>10.4f}")
    print(f"greedy fit: {slope:.3g} s/node + {intercept:.3g}s, R2 {r2:.4f}")


if __name__ == "__main__":
    main()
