#!/usr/bin/env python3
"""Generate the synthetic digit datasets: a training split and the frozen
1000-image evaluation fixture.

Both splits are pure functions of their seeds, so this script reproduces the
committed fixture files byte-for-byte.
"""

import argparse
from pathlib import Path

from fsakit.datagen import generate_digits
from fsakit.harness import save_idx_images, save_idx_labels


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data", help="output directory (default: data/)")
    parser.add_argument("--train-count", type=int, default=10000)
    parser.add_argument("--fixture-count", type=int, default=1000)
    parser.add_argument("--train-seed", type=int, default=20250801)
    parser.add_argument("--fixture-seed", type=int, default=20250802)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    for split, count, seed in (
        ("train", args.train_count, args.train_seed),
        ("fixture", args.fixture_count, args.fixture_seed),
    ):
        images, labels = generate_digits(count, seed=seed)
        save_idx_images(out / f"{split}-images.idx", images)
        save_idx_labels(out / f"{split}-labels.idx", labels)
        print(f"{split}: {count} images (seed {seed}) -> {out}/{split}-{{images,labels}}.idx")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
