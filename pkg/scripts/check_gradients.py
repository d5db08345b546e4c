#!/usr/bin/env python3
"""Finite-difference audit of the hand-derived gradients.

Runs the full-pipeline gradient check over a range of seeds and batch
shapes and prints the worst relative error per parameter group.  Useful
after touching anything in the scoring or loss chain.
"""
import argparse
import sys
from pathlib import Path
from time import perf_counter

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tempalign.model import full_grad_check

GROUPS = ("text", "audio", "adapter", "projection", "gammas")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--epsilon", type=float, default=1e-5)
    ap.add_argument("--tolerance", type=float, default=1e-6)
    ap.add_argument("--symmetric", action="store_true", help="use the two-directional loss")
    args = ap.parse_args()

    worst = {g: 0.0 for g in GROUPS}
    failed = 0
    start = perf_counter()
    for seed in range(args.seeds):
        report = full_grad_check(
            seed=seed,
            batch=args.batch,
            dim=args.dim,
            epsilon=args.epsilon,
            tolerance=args.tolerance,
            symmetric=args.symmetric,
        )
        for group, err in report.groups.items():
            worst[group] = max(worst[group], err)
        if not report.passed:
            failed += 1
            print(f"seed {seed}: FAILED {report.groups}")
    elapsed = perf_counter() - start

    print(f"\n{args.seeds} seeds, batch={args.batch}, dim={args.dim}, eps={args.epsilon:g} ({elapsed:.1f}s)")
    for group in GROUPS:
        print(f"  {group:>10}: worst rel err {worst[group]:.3e}")
    if failed:
        print(f"{failed} seed(s) exceeded tolerance {args.tolerance:g}")
        return 3
    print(f"all seeds within tolerance {args.tolerance:g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
