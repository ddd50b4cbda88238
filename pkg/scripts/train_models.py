#!/usr/bin/env python3
"""Train the two victim classifiers on the generated training split and
freeze their weights, recording training time and held-out accuracy in
models/metadata.json.

Run scripts/make_dataset.py first (or pass matching --data-dir paths).
"""

import argparse
import json
import time
from pathlib import Path

from fsakit.harness import load_idx
from fsakit.model import predict, save_weights, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--out-dir", default="models")
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--lr", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = load_idx(data_dir / "train-images.idx", data_dir / "train-labels.idx", name="train")
    fixture = load_idx(data_dir / "fixture-images.idx", data_dir / "fixture-labels.idx", name="fixture")

    metadata = {
        "train_images": len(train_set),
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "models": {},
    }
    for arch in ("cnn", "mlp"):
        losses = []
        t0 = time.perf_counter()
        net = train(
            arch,
            train_set,
            epochs=args.epochs,
            lr=args.lr,
            seed=args.seed,
            on_epoch=lambda e, l: losses.append(round(l, 6)),
        )
        elapsed = time.perf_counter() - t0
        train_acc = float((predict(net, train_set.pixels) == train_set.labels).mean())
        fixture_acc = float((predict(net, fixture.pixels) == fixture.labels).mean())
        path = out_dir / f"desk_{arch}.fsaw"
        save_weights(net, path)
        metadata["models"][f"desk_{arch}"] = {
            "weights": path.name,
            "train_seconds": round(elapsed, 2),
            "epoch_losses": losses,
            "train_accuracy": round(train_acc, 4),
            "fixture_accuracy": round(fixture_acc, 4),
        }
        print(
            f"desk_{arch}: trained in {elapsed:.1f}s, "
            f"train acc {train_acc:.4f}, fixture acc {fixture_acc:.4f} -> {path}"
        )

    meta_path = out_dir / "metadata.json"
    meta_path.write_text(json.dumps(metadata, indent=2) + "\n")
    print(f"wrote {meta_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
