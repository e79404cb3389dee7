"""Check the sequential and parallel equivalence results on many random instances.

Prints a histogram of log10 deviations per (family, check) and the worst seed,
which can be replayed with ``bffg verify --trials 1 --seed <seed> --family <family>``.
"""

from __future__ import annotations

import argparse
import math
import time
from collections import defaultdict

import numpy as np

from bffg.instances import InstanceConfig, run_verification


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--family", default="both", choices=("discrete", "gaussian", "both", "identity"))
    ap.add_argument("--max-states", type=int, default=5)
    ap.add_argument("--dimension", type=int, default=2)
    ap.add_argument("--exact-backward", action="store_true", help="use the forward kernels in the backward pass")
    args = ap.parse_args()

    cfg = InstanceConfig(max_states=args.max_states, dimension=args.dimension, approximate_backward=not args.exact_backward)
    start = time.perf_counter()
    outcomes = run_verification(args.trials, args.seed, args.family, cfg)
    elapsed = time.perf_counter() - start

    groups = defaultdict(list)
    for o in outcomes:
        groups[(o.family, o.check)].append(o)
    bins = np.arange(-18, -7)
    for (family, check), items in sorted(groups.items()):
        worst = max(items, key=lambda o: o.worst)
        logs = np.array([math.log10(max(o.worst, 1e-18)) for o in items])
        counts, _ = np.histogram(logs, bins=bins)
        print(f"{family} / {check}: {len(items)} trials, worst {worst.worst:.3e} at seed {worst.seed}")
        for lo, c in zip(bins[:-1], counts):
            if c:
                print(f"  1e{lo:+d} .. 1e{lo + 1:+d}  {'#' * max(1, round(40 * c / len(items)))} {c}")
    print(f"{len(outcomes)} checks in {elapsed:.1f} s")


if __name__ == "__main__":
    main()
