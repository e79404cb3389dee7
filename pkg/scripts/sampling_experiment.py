"""Importance-sampling behaviour of guided forward sampling on a chain.

For a random hidden Markov chain, compares the backward kernels used in the
guide (exact, a mixture with uniform rows, fully uniform rows) by effective
sample size and by the error of the self-normalized marginal estimates
against brute-force enumeration.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bffg.instances import hmm_chain, random_stochastic
from bffg.oracle import brute_force_smoother
from bffg.tree import run_bffg_sampling


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--states", type=int, default=3)
    ap.add_argument("--length", type=int, default=5)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mix", type=float, nargs="*", default=[0.0, 0.5, 0.9, 1.0], help="weight on uniform rows in the backward kernels")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    s, n = args.states, args.length
    transitions = [random_stochastic(rng, s, s) for _ in range(n)]
    emission = random_stochastic(rng, s, s)
    obs = rng.integers(s, size=n)
    root = int(rng.integers(s))
    exact = brute_force_smoother(hmm_chain(transitions, emission, root, obs)).marginals

    print(f"{'mix':>5} {'ess':>10} {'ess/N':>7} {'max |err|':>10} {'max z':>7} {'seconds':>8}")
    for lam in args.mix:
        backward = [(1 - lam) * P + lam / s for P in transitions]
        t = hmm_chain(transitions, emission, root, obs, backward)
        start = time.perf_counter()
        res = run_bffg_sampling(t, args.samples, args.seed)
        elapsed = time.perf_counter() - start
        w = res.weights / res.weights.sum()
        err = z = 0.0
        for node, p in exact.items():
            pts = np.asarray(res.trajectories[node])
            for state in range(s):
                ind = pts == state
                est = w[ind].sum()
                se = np.sqrt(np.sum((w * (ind - est)) ** 2))
                err = max(err, abs(est - p[state]))
                z = max(z, abs(est - p[state]) / se if se > 0 else 0.0)
        print(f"{lam:5.2f} {res.ess:10.1f} {res.ess / args.samples:7.3f} {err:10.2e} {z:7.2f} {elapsed:8.2f}")


if __name__ == "__main__":
    main()
