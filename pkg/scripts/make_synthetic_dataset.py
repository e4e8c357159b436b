"""Write a synthetic dataset in the official CSV layout.

    python3 scripts/make_synthetic_dataset.py toy OUT_DIR            # small learnable set with images
    python3 scripts/make_synthetic_dataset.py count-matched OUT_DIR  # label counts equal to the published splits
"""

import argparse
from pathlib import Path

from memotion.synthetic import make_toy_dataset, write_count_matched_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("kind", choices=["toy", "count-matched"])
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train", type=int, default=48, help="toy train size")
    args = parser.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "toy":
        sizes = {"train": args.train, "dev": max(args.train // 2, 3), "test": max(args.train // 2, 3)}
        paths = make_toy_dataset(args.out_dir, sizes, seed=args.seed)
    else:
        paths = {}
        for split in ("train", "dev", "test"):
            paths[split] = args.out_dir / f"{split}.csv"
            write_count_matched_csv(paths[split], split, seed=args.seed)
    for split, path in paths.items():
        print(f"{split}: {path}")


if __name__ == "__main__":
    main()
