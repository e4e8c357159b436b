"""Ablation runner over the five encoder variants (eight subtask models each)."""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import ALL_TASKS, MemeRecord, Task, trainable_records
from .metrics import EvaluationReport, aggregate, comparison_rows, render_comparison
from .trainer import PRESETS, VARIANT_LABELS, TrainingConfig, evaluate_records, train

logger = logging.getLogger(__name__)

COMPARATIVE_PRESETS = {
    "bert": "comparative_bert",
    "densenet": "comparative_densenet",
    "resnet": "comparative_resnet",
    "bert_densenet": "comparative_bert_densenet",
    "bert_resnet": "comparative_bert_resnet",
}


def parse_models(value: str | Sequence[str] | None) -> list[str]:
    if value is None:
        return list(COMPARATIVE_PRESETS)
    names = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for name in names:
        key = name.strip().lower().replace("-", "_")
        if key not in COMPARATIVE_PRESETS:
            raise ValueError(f"unknown model {name!r}; choose from {', '.join(COMPARATIVE_PRESETS)}")
        if key not in out:
            out.append(key)
    return out


def evaluation_split(splits: Mapping[str, Sequence[MemeRecord]]) -> str:
    """Score on test when it is labeled, otherwise on dev."""
    test = splits.get("test")
    if test and all(r.labels is not None for r in test):
        return "test"
    return "dev"


@dataclass
class VariantRun:
    variant: str
    preset: str
    split: str
    per_subtask: dict[Task, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def report(self) -> EvaluationReport | None:
        if self.error is not None or len(self.per_subtask) != len(ALL_TASKS):
            return None
        return aggregate(self.per_subtask)


def run_variant(
    variant: str,
    splits: Mapping[str, Sequence[MemeRecord]],
    toy: bool = False,
    seed: int = 42,
    overrides: Mapping | None = None,
    tasks: Sequence[Task] = ALL_TASKS,
    out_dir: str | Path | None = None,
) -> VariantRun:
    preset = PRESETS[COMPARATIVE_PRESETS[variant]]
    config: TrainingConfig = preset.config.override(seed=seed, **dict(overrides or {}))
    split = evaluation_split(splits)
    run = VariantRun(variant, preset.name, split)
    train_recs = trainable_records(splits["train"], config.include_manual_text)
    dev_recs = trainable_records(splits["dev"], config.include_manual_text)
    eval_recs = trainable_records(splits[split], True)
    if preset.variant in ("bert", "bert_densenet", "bert_resnet"):
        eval_recs = [r for r in eval_recs if r.corrected_text is not None]
    for task in tasks:
        spec = preset.model_spec(task, toy=toy, config=config)
        task_dir = None if out_dir is None else Path(out_dir) / variant / task.value
        result = train(spec, config, train_recs, dev_recs, out_dir=task_dir)
        score, _ = evaluate_records(result.model, eval_recs)
        run.per_subtask[task] = score
        logger.info("%s %s %s macro-F1 %.4f", variant, task.value, split, score)
    return run


def run_comparison(
    splits: Mapping[str, Sequence[MemeRecord]],
    models: Sequence[str] | None = None,
    toy: bool = False,
    seed: int = 42,
    overrides: Mapping | None = None,
    out_dir: str | Path | None = None,
) -> tuple[dict[str, EvaluationReport], list[VariantRun]]:
    """Train and score each variant; a failing variant is recorded and skipped."""
    runs = []
    reports: dict[str, EvaluationReport] = {}
    for variant in parse_models(models):
        try:
            run = run_variant(variant, splits, toy=toy, seed=seed, overrides=overrides, out_dir=out_dir)
        except Exception as exc:  # keep going with the remaining variants
            logger.error("variant %s failed: %s", variant, exc)
            logger.debug("%s", traceback.format_exc())
            run = VariantRun(variant, COMPARATIVE_PRESETS[variant], evaluation_split(splits), error=str(exc))
        runs.append(run)
        if run.report is not None:
            reports[VARIANT_LABELS[variant]] = run.report
    if out_dir is not None:
        write_results(runs, reports, seed, out_dir)
    return reports, runs


def result_records(runs: Sequence[VariantRun], seed: int) -> list[dict]:
    records = []
    for run in runs:
        if run.error is not None:
            records.append(
                {"model": VARIANT_LABELS[run.variant], "preset": run.preset, "seed": seed, "error": run.error}
            )
            continue
        for task, score in run.per_subtask.items():
            records.append(
                {
                    "model": VARIANT_LABELS[run.variant],
                    "preset": run.preset,
                    "seed": seed,
                    "split": run.split,
                    "subtask": task.value,
                    "score": score,
                }
            )
    return records


def write_results(runs, reports, seed: int, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for rec in result_records(runs, seed):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out_dir / "comparison.json").write_text(
        json.dumps(comparison_rows(reports), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "comparison.txt").write_text(render_comparison(reports) + "\n", encoding="utf-8")
