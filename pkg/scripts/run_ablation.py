#!/usr/bin/env python3
"""Budget and step-count ablations for the consistency wrapper.

Sweeps eps at fixed steps, and steps at fixed eps, reporting how much the
wrapper improves each method's success rate as the budget grows or the
iteration count changes.
"""

import argparse
import statistics
from pathlib import Path

from fsakit.attacks import AttackConfig
from fsakit.cli import parse_eps
from fsakit.harness import compare_fsa, load_idx
from fsakit.model import load_weights


def delta_grid(model, data, model_id, method, eps_values, steps_values, seeds):
    """Seed-averaged FSA delta for each (eps, steps) cell."""
    grid = {}
    for eps in eps_values:
        for steps in steps_values:
            deltas = []
            for seed in seeds:
                cfg = AttackConfig(method=method, eps=eps, steps=steps, seed=seed)
                row = compare_fsa(model, data, [cfg], model_id=model_id)[0]
                deltas.append(row["delta"])
            grid[(eps, steps)] = statistics.mean(deltas)
    return grid


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--weights", default="models/desk_cnn.fsaw")
    parser.add_argument("--images", default="data/fixture-images.idx")
    parser.add_argument("--labels", default="data/fixture-labels.idx")
    parser.add_argument("--method", default="TIFGSM")
    parser.add_argument("--eps-list", default="1/255,2/255,4/255")
    parser.add_argument("--steps-list", default="5,10,16")
    parser.add_argument("--fixed-steps", type=int, default=5)
    parser.add_argument("--fixed-eps", default="1/255")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    model = load_weights(args.weights)
    data = load_idx(args.images, args.labels, name="fixture")
    if args.limit:
        data = data.subset(args.limit)
    model_id = Path(args.weights).stem
    method = args.method.strip().upper()
    eps_values = [parse_eps(e) for e in args.eps_list.split(",") if e.strip()]
    steps_values = [int(s) for s in args.steps_list.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    fixed_eps = parse_eps(args.fixed_eps)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    eps_grid = delta_grid(model, data, model_id, method, eps_values, [args.fixed_steps], seeds)
    print(f"{method} wrapper delta vs eps (steps={args.fixed_steps}):")
    for eps in eps_values:
        print(f"  eps={eps:.6g}: {100 * eps_grid[(eps, args.fixed_steps)]:+.2f} points")

    steps_grid = delta_grid(model, data, model_id, method, [fixed_eps], steps_values, seeds)
    print(f"{method} wrapper delta vs steps (eps={fixed_eps:.6g}):")
    for steps in steps_values:
        print(f"  steps={steps}: {100 * steps_grid[(fixed_eps, steps)]:+.2f} points")

    lines = ["method,eps,steps,mean_delta"]
    for (eps, steps), delta in list(eps_grid.items()) + list(steps_grid.items()):
        lines.append(f"{method},{eps!r},{steps},{delta!r}")
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir}/ablation.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
