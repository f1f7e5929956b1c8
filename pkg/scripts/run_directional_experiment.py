#!/usr/bin/env python
"""Run the mixup-vs-penalty comparison across seeds and print the verdict.

Example:
    python3 scripts/run_directional_experiment.py --seeds 0 1 2 3 4 --epochs 30 \
        --out runs/directional.json
"""

import argparse
import dataclasses
import json

from semix.experiments import run_directional_experiment, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n-train", type=int, default=6000)
    ap.add_argument("--n-test", type=int, default=1800)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--weight-decay", type=float, default=1e-4)
    ap.add_argument("--pairs", type=int, default=500)
    ap.add_argument("--out", help="write per-seed results + summary as JSON")
    args = ap.parse_args()

    outcomes = run_directional_experiment(
        seeds=tuple(args.seeds), n_train=args.n_train, n_test=args.n_test,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        alpha=args.alpha, gamma=args.gamma, noise=args.noise,
        weight_decay=args.weight_decay, pair_count=args.pairs, progress=print,
    )
    summary = summarize(outcomes)

    print(f"\n{'seed':>4} {'gap mixup':>10} {'gap sem':>10} {'reduction':>10} "
          f"{'corr mixup':>11} {'corr sem':>9} {'clean mixup':>12} {'clean sem':>10}")
    for o in outcomes:
        print(f"{o.seed:>4} {o.gap_mixup:>10.4f} {o.gap_sem:>10.4f} "
              f"{o.gap_reduction:>9.1%} {o.corr_mixup:>11.4f} {o.corr_sem:>9.4f} "
              f"{o.clean_mixup:>12.4f} {o.clean_sem:>10.4f}")
    print(f"\ngap lower for sem in {summary['gap_wins']}/{summary['seeds']} seeds; "
          f"mean reduction {summary['gap_mean_reduction']:.1%}")
    print(f"corruption accuracy within 0.5pp or better in {summary['corr_ok']}/{summary['seeds']} seeds "
          f"(mixup {summary['corr_mean_mixup']:.4f} vs sem {summary['corr_mean_sem']:.4f})")

    if args.out:
        payload = {"outcomes": [dataclasses.asdict(o) for o in outcomes], "summary": summary}
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
