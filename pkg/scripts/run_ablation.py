"""Train every comparative variant on a record store and print the comparison table.

Runs over a list of seeds and reports per-subtask mean and spread, which the
single-seed ``memotion compare`` does not.

    python3 scripts/run_ablation.py STORE OUT_DIR --seeds 42,43,44 [--toy-encoders] [--models densenet,bert]
"""

import argparse
import json
import logging
import statistics
from pathlib import Path

from memotion.dataset import load_store
from memotion.experiments import parse_models, run_comparison
from memotion.metrics import render_comparison


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("store", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seeds", default="42")
    parser.add_argument("--models", default=None)
    parser.add_argument("--toy-encoders", action="store_true")
    parser.add_argument("--config", type=Path, help="JSON file of training overrides")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    splits = load_store(args.store)
    overrides = json.loads(args.config.read_text()) if args.config else None
    seeds = [int(s) for s in args.seeds.split(",")]
    scores: dict[tuple[str, str], list[float]] = {}
    for seed in seeds:
        reports, _ = run_comparison(splits, parse_models(args.models), toy=args.toy_encoders, seed=seed,
                                    overrides=overrides, out_dir=args.out_dir / f"seed{seed}")
        print(f"\nseed {seed}\n" + render_comparison(reports))
        for model, report in reports.items():
            for task, value in report.per_subtask.items():
                scores.setdefault((model, task.value), []).append(value)

    summary = [
        {"model": m, "subtask": t, "mean": statistics.fmean(v), "stdev": statistics.pstdev(v), "n": len(v)}
        for (m, t), v in sorted(scores.items())
    ]
    (args.out_dir / "ablation_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"\n{'model':<16}{'subtask':<16}{'mean':>8}{'stdev':>8}")
    for row in summary:
        print(f"{row['model']:<16}{row['subtask']:<16}{row['mean']:>8.4f}{row['stdev']:>8.4f}")


if __name__ == "__main__":
    main()
