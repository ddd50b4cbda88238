"""Command-line interface: train victims, run attacks, sweep grids, selftest.

Exit codes: 0 on success, 1 on validation errors (bad arguments or
configuration), 2 on I/O errors (missing or malformed files).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .attacks import METHODS, AttackConfig
from .frequency import DctMode
from .harness import IdxFormatError, evaluate, load_idx, save_png, sweep, write_csv
from .model import WeightFormatError, load_weights, predict, save_weights, train


def parse_eps(text: str) -> float:
    """Accept '0.03137' or '8/255' style budgets."""
    text = str(text).strip()
    if "/" in text:
        num, _, den = text.partition("/")
        try:
            value = float(num) / float(den)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse eps fraction {text!r}: {exc}") from None
    else:
        try:
            value = float(text)
        except ValueError:
            raise ValueError(f"cannot parse eps value {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {text!r} = {value}")
    return value


def _parse_list(text: str, convert):
    items = [part.strip() for part in str(text).split(",") if part.strip()]
    if not items:
        raise ValueError(f"expected a comma-separated list, got {text!r}")
    return [convert(part) for part in items]


def _load_dataset(args):
    data = load_idx(args.images, args.labels, class_count=args.classes)
    if args.limit is not None:
        data = data.subset(args.limit)
    return data


def _add_data_args(sub, with_limit=True):
    sub.add_argument("--images", required=True, help="IDX image file")
    sub.add_argument("--labels", required=True, help="IDX label file")
    sub.add_argument("--classes", type=int, default=10, help="number of classes (default 10)")
    if with_limit:
        sub.add_argument("--limit", type=int, default=None, help="use only the first N images")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsakit", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a victim classifier and save its weights")
    p_train.add_argument("--arch", choices=("mlp", "cnn"), required=True)
    _add_data_args(p_train)
    p_train.add_argument("--epochs", type=int, default=5)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--out", required=True, help="output weights file")
    p_train.add_argument("--eval-images", default=None, help="optional held-out IDX images")
    p_train.add_argument("--eval-labels", default=None, help="optional held-out IDX labels")

    p_attack = subs.add_parser("attack", help="run one attack configuration over a dataset")
    p_attack.add_argument("--weights", required=True)
    _add_data_args(p_attack)
    p_attack.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)}")
    p_attack.add_argument("--eps", required=True, help="budget, e.g. 0.031 or 8/255")
    p_attack.add_argument("--steps", type=int, default=5)
    p_attack.add_argument("--alpha", default=None, help="per-step size (default eps/steps)")
    p_attack.add_argument("--fsa", action="store_true", help="wrap the method with the consistency attack")
    p_attack.add_argument("--dct-mode", choices=[m.value for m in DctMode], default=DctMode.SCALED.value)
    p_attack.add_argument("--seed", type=int, default=0)
    p_attack.add_argument("--model-id", default=None, help="model name for the report (default: weights stem)")
    p_attack.add_argument("--out", default=None, help="write a one-row CSV report here")
    p_attack.add_argument("--save-adv", default=None, help="directory for 8-bit adversarial PNGs")
    p_attack.add_argument("--timing", action="store_true", help="include wall time in the CSV (breaks byte determinism)")
    p_attack.add_argument("--chunk-size", type=int, default=500)

    p_sweep = subs.add_parser("sweep", help="factorial (method, fsa, eps, steps) grid to CSV")
    p_sweep.add_argument("--weights", required=True)
    _add_data_args(p_sweep)
    p_sweep.add_argument("--methods", required=True, help="comma-separated method names")
    p_sweep.add_argument("--eps", required=True, help="comma-separated budgets, e.g. 1/255,8/255")
    p_sweep.add_argument("--steps", required=True, help="comma-separated step counts")
    p_sweep.add_argument("--dct-mode", choices=[m.value for m in DctMode], default=DctMode.SCALED.value)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--model-id", default=None)
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--timing", action="store_true", help="include wall times in the CSV (breaks byte determinism)")
    p_sweep.add_argument("--chunk-size", type=int, default=500)

    subs.add_parser("selftest", help="run the built-in oracle and property checks")
    return parser


def _warn_degenerate(cfg: AttackConfig) -> None:
    if cfg.fsa and cfg.dct_mode is DctMode.ORTHO:
        print(
            "warning: with --dct-mode ortho the consistency mask is provably all-ones "
            "and the wrapped attack equals the base attack",
            file=sys.stderr,
        )


def _cmd_train(args) -> int:
    data = _load_dataset(args)
    losses = []
    net = train(
        args.arch,
        data,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        on_epoch=lambda e, l: losses.append(l) or print(f"epoch {e}: mean loss {l:.4f}"),
    )
    save_weights(net, args.out)
    print(f"saved weights to {args.out}")
    if args.eval_images and args.eval_labels:
        held = load_idx(args.eval_images, args.eval_labels, class_count=args.classes)
        acc = float((predict(net, held.pixels) == held.labels).mean())
        print(f"held-out accuracy: {acc:.4f} on {len(held)} images")
    return 0


def _cmd_attack(args) -> int:
    net = load_weights(args.weights)
    data = _load_dataset(args)
    cfg = AttackConfig(
        method=args.method,
        eps=parse_eps(args.eps),
        steps=args.steps,
        alpha=None if args.alpha is None else parse_eps(args.alpha),
        fsa=args.fsa,
        dct_mode=DctMode(args.dct_mode),
        seed=args.seed,
    )
    _warn_degenerate(cfg)
    model_id = args.model_id or os.path.splitext(os.path.basename(args.weights))[0]
    report = evaluate(net, data, cfg, model_id=model_id, chunk_size=args.chunk_size, keep_adversarial=bool(args.save_adv))
    print(
        f"{report.model_id}: method={report.method} fsa={str(report.fsa).lower()} "
        f"eps={report.eps:.6g} steps={report.steps} "
        f"success {report.n_success}/{report.n_eligible} eligible ({100 * report.success_rate:.2f}%) "
        f"in {report.wall_time_s:.2f}s"
    )
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    if args.out:
        write_csv([report], args.out, timing=args.timing)
        print(f"wrote report to {args.out}")
    if args.save_adv:
        os.makedirs(args.save_adv, exist_ok=True)
        for i in range(len(data)):
            save_png(report.adversarial[i], os.path.join(args.save_adv, f"adv_{i:05d}.png"))
        print(f"wrote {len(data)} adversarial PNGs to {args.save_adv}")
    return 0


def _cmd_sweep(args) -> int:
    net = load_weights(args.weights)
    data = _load_dataset(args)
    methods = _parse_list(args.methods, str)
    eps_values = _parse_list(args.eps, parse_eps)
    steps_values = _parse_list(args.steps, int)
    if DctMode(args.dct_mode) is DctMode.ORTHO:
        print(
            "warning: --dct-mode ortho makes every fsa=true row equal its base row "
            "(the consistency mask is provably all-ones)",
            file=sys.stderr,
        )
    model_id = args.model_id or os.path.splitext(os.path.basename(args.weights))[0]
    reports = sweep(
        net,
        data,
        methods,
        eps_values,
        steps_values,
        dct_mode=DctMode(args.dct_mode),
        seed=args.seed,
        model_id=model_id,
        chunk_size=args.chunk_size,
    )
    write_csv(reports, args.out, timing=args.timing)
    print(f"wrote {len(reports)} rows to {args.out}")
    return 0


def _cmd_selftest(_args) -> int:
    from . import selftest

    return 0 if selftest.run() else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": _cmd_train, "attack": _cmd_attack, "sweep": _cmd_sweep, "selftest": _cmd_selftest}
    try:
        return handlers[args.command](args)
    except (IdxFormatError, WeightFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
