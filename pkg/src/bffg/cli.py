"""Command-line entry point: ``bffg smooth`` and ``bffg verify``."""

from __future__ import annotations

import argparse
import sys
import time

from .errors import ModelError, NumericalError, UnsupportedPairingError
from .instances import run_verification
from .io import load_model, result_to_dict, write_result
from .tree import run_bffg_exact, run_bffg_sampling

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_UNSUPPORTED = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4

VERIFY_TOLERANCE = 1e-10


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="bffg", description="Backward filtering, forward guiding on directed trees.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("smooth", help="smooth a tree model given as JSON")
    s.add_argument("--model", required=True, help="model file (bffg-model-v1 JSON)")
    s.add_argument("--mode", required=True, choices=("exact", "sampling"))
    s.add_argument("--samples", type=_positive, default=1000, help="replicates in sampling mode (default 1000)")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--output", required=True, help="where to write the result JSON")
    s.set_defaults(func=cmd_smooth)

    v = sub.add_parser("verify", help="run the sequential and parallel equivalence checks on random instances")
    v.add_argument("--trials", type=_positive, required=True)
    v.add_argument("--seed", type=_seed, required=True)
    v.add_argument("--family", choices=("discrete", "gaussian", "both", "identity"), default="both")
    v.set_defaults(func=cmd_verify)
    return p


def cmd_smooth(args):
    try:
        model = load_model(args.model)
    except (OSError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    start = time.perf_counter()
    try:
        if args.mode == "exact":
            res = run_bffg_exact(model)
            res.seed = None
        else:
            res = run_bffg_sampling(model, args.samples, args.seed)
    except UnsupportedPairingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    elapsed = time.perf_counter() - start
    write_result(result_to_dict(res, elapsed, args.model), args.output)

    print(f"mode: {res.mode}")
    print(f"evidence: {res.evidence:.17g}")
    print(f"log_evidence: {res.log_evidence:.17g}")
    if res.mode == "sampling":
        print(f"samples: {args.samples}  seed: {args.seed}  ess: {res.ess:.6g}")
    return EXIT_OK


def cmd_verify(args):
    outcomes = run_verification(args.trials, args.seed, args.family)
    worst = {}
    for o in outcomes:
        key = (o.family, o.check)
        if key not in worst or o.worst > worst[key].worst:
            worst[key] = o
    for (family, check), o in sorted(worst.items()):
        print(f"{family:<9} {check:<10} max deviation {o.deviation:.3e}  max message deviation {o.message_deviation:.3e}")
    failing = [o for o in outcomes if not o.worst <= VERIFY_TOLERANCE]
    if failing:
        for o in failing:
            print(
                f"FAIL seed={o.seed} family={o.family} check={o.check} deviation={o.worst:.3e}"
                f" (reproduce: bffg verify --trials 1 --seed {o.seed} --family {o.family})"
            )
        return EXIT_TOLERANCE
    print(f"all {len(outcomes)} checks within {VERIFY_TOLERANCE:g}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
