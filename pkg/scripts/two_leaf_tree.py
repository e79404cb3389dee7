"""Smooth the bundled two-leaf tree exactly and by sampling, and compare with enumeration."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from bffg.io import load_model
from bffg.oracle import brute_force_smoother
from bffg.tree import run_bffg_exact, run_bffg_sampling

DEFAULT_MODEL = Path(__file__).resolve().parent.parent / "models" / "two_leaf_tree.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", type=Path, default=DEFAULT_MODEL)
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    t = load_model(args.model)
    exact = run_bffg_exact(t)
    bf = brute_force_smoother(t)
    sampled = run_bffg_sampling(t, args.samples, args.seed)
    print(f"evidence  exact {exact.evidence:.12f}  enumeration {bf.evidence:.12f}  sampling {sampled.evidence:.6f}")
    np.set_printoptions(precision=5, suppress=True)
    for n in t.latent_ids:
        print(f"{n:>4}  exact {exact.marginals[n].weights}  enumeration {bf.marginals[n]}  sampling {sampled.estimates[n]}")
    print(f"ess {sampled.ess:.1f} of {args.samples}")


if __name__ == "__main__":
    main()
