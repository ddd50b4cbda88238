#!/usr/bin/env python3
"""Paired base-vs-consistency-wrapped success rates on the frozen victim.

For every gradient-sign method, run the attack with and without the
frequency/spatial consistency wrapper over several seeds, then report
per-seed deltas (the raw data behind a per-method delta box plot) and the
seed-averaged comparison table.
"""

import argparse
import statistics
from pathlib import Path

from fsakit.attacks import METHODS, AttackConfig
from fsakit.cli import parse_eps
from fsakit.harness import compare_fsa, comparison_markdown, load_idx
from fsakit.model import load_weights


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--weights", default="models/desk_cnn.fsaw")
    parser.add_argument("--images", default="data/fixture-images.idx")
    parser.add_argument("--labels", default="data/fixture-labels.idx")
    parser.add_argument("--methods", default="IFGSM,MIFGSM,DIFGSM,TIFGSM,PGD")
    parser.add_argument("--eps", default="1/255")
    parser.add_argument("--steps", type=int, default=5)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    model = load_weights(args.weights)
    data = load_idx(args.images, args.labels, name="fixture")
    if args.limit:
        data = data.subset(args.limit)
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    eps = parse_eps(args.eps)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise SystemExit(f"unknown methods: {unknown}; valid: {', '.join(METHODS)}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_seed = {}  # method -> list of (seed, base, fsa, delta)
    for seed in seeds:
        cfgs = [AttackConfig(method=m, eps=eps, steps=args.steps, seed=seed) for m in methods]
        for row in compare_fsa(model, data, cfgs, model_id=Path(args.weights).stem):
            per_seed.setdefault(row["method"], []).append(
                (seed, row["base_rate"], row["fsa_rate"], row["delta"])
            )
        print(f"seed {seed} done", flush=True)

    delta_csv = ["method,seed,base_rate,fsa_rate,delta"]
    averaged = []
    for method in methods:
        rows = per_seed[method]
        for seed, base, fsa, delta in rows:
            delta_csv.append(f"{method},{seed},{base!r},{fsa!r},{delta!r}")
        averaged.append(
            {
                "method": method,
                "eps": eps,
                "steps": args.steps,
                "base_rate": statistics.mean(r[1] for r in rows),
                "fsa_rate": statistics.mean(r[2] for r in rows),
                "delta": statistics.mean(r[3] for r in rows),
            }
        )

    table = comparison_markdown(averaged)
    print("\nSeed-averaged comparison:\n" + table)
    (out_dir / "comparison.md").write_text(table + "\n")
    (out_dir / "deltas.csv").write_text("\n".join(delta_csv) + "\n")
    print(f"\nwrote {out_dir}/comparison.md and {out_dir}/deltas.csv")
    mean_delta = statistics.mean(row["delta"] for row in averaged)
    print(f"mean delta over methods: {100 * mean_delta:+.2f} points")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
