"""Macro-F1, per-task aggregation and comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import ALL_TASKS, TASK_GROUPS, Task

# Published Memotion scores (macro-F1 for Task A; mean subtask macro-F1 for B and C).
REFERENCE_SCORES: dict[str, dict[str, float]] = {
    "Highest score": {"A": 0.3547, "B": 0.5183, "C": 0.3225},
    "BERT-DenseNet (submitted)": {"A": 0.3452, "B": 0.4421, "C": 0.3097},
    "BERT": {"A": 0.1574, "B": 0.4798, "C": 0.2749},
    "DenseNet": {"A": 0.3344, "B": 0.5120, "C": 0.3209},
    "ResNet": {"A": 0.3186, "B": 0.4965, "C": 0.3129},
    "BERT-DenseNet": {"A": 0.3137, "B": 0.4999, "C": 0.3127},
    "BERT-ResNet": {"A": 0.3305, "B": 0.4946, "C": 0.3149},
    "Baseline": {"A": 0.2176, "B": 0.5002, "C": 0.3009},
}
REFERENCE_ROWS = ("Highest score", "Baseline")
MODEL_ROWS = ("BERT", "DenseNet", "ResNet", "BERT-DenseNet", "BERT-ResNet")
TABLE_ROWS = ("Highest score", *MODEL_ROWS, "Baseline")


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes.

    A class that never occurs in either vector scores 0, as does any class
    whose precision or recall has a zero denominator.
    """
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise ValueError("macro_f1 needs at least one example")
    if t.min() < 0 or p.min() < 0 or t.max() >= num_classes or p.max() >= num_classes:
        raise ValueError(f"class indices must lie in [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (t, p), 1)
    tp = np.diag(confusion).astype(float)
    # 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when TP == 0
    denom = confusion.sum(axis=0) + confusion.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean())


@dataclass(frozen=True)
class EvaluationReport:
    per_subtask: dict[Task, float]
    task_a_score: float
    task_b_score: float
    task_c_score: float

    def scores(self) -> dict[str, float]:
        return {"A": self.task_a_score, "B": self.task_b_score, "C": self.task_c_score}

    def to_dict(self) -> dict:
        return {
            "per_subtask": {t.value: s for t, s in self.per_subtask.items()},
            "task_a_score": self.task_a_score,
            "task_b_score": self.task_b_score,
            "task_c_score": self.task_c_score,
        }


def aggregate(per_subtask: Mapping[Task | str, float]) -> EvaluationReport:
    scores = {Task.parse(k): float(v) for k, v in per_subtask.items()}
    for task in ALL_TASKS:
        if task not in scores:
            raise KeyError(f"missing subtask score: {task.value}")
    b = [scores[t] for t in TASK_GROUPS["B"]]
    c = [scores[t] for t in TASK_GROUPS["C"]]
    return EvaluationReport(
        per_subtask={t: scores[t] for t in ALL_TASKS},
        task_a_score=scores[Task.A],
        task_b_score=sum(b) / len(b),
        task_c_score=sum(c) / len(c),
    )


def comparison_rows(
    reports: Mapping[str, EvaluationReport], references: Mapping[str, Mapping[str, float]] = REFERENCE_SCORES
) -> list[dict]:
    """Rows in table order: reference rows always, model rows only when a fresh report exists."""
    rows = []
    for name in TABLE_ROWS:
        if name in REFERENCE_ROWS:
            rows.append({"model": name, "kind": "reference", "scores": dict(references[name]), "published": None})
        elif name in reports:
            rows.append(
                {
                    "model": name,
                    "kind": "fresh",
                    "scores": reports[name].scores(),
                    "published": dict(references[name]) if name in references else None,
                }
            )
    for name in reports:
        if name not in TABLE_ROWS:
            rows.insert(-1, {"model": name, "kind": "fresh", "scores": reports[name].scores(), "published": None})
    return rows


def render_comparison(
    reports: Mapping[str, EvaluationReport], references: Mapping[str, Mapping[str, float]] = REFERENCE_SCORES
) -> str:
    """Plain-text table; fresh rows show the published value in parentheses."""
    rows = comparison_rows(reports, references)
    width = max(len("Models"), *(len(r["model"]) for r in rows))
    header = f"{'Models':<{width}} | {'Task A':<16} | {'Task B':<16} | {'Task C':<16}"
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = []
        for key in ("A", "B", "C"):
            cell = f"{row['scores'][key]:.4f}"
            if row["published"] is not None:
                cell += f" ({row['published'][key]:.4f})"
            cells.append(f"{cell:<16}")
        lines.append(f"{row['model']:<{width}} | " + " | ".join(cells))
    return "\n".join(lines)


def comparison_json(reports: Mapping[str, EvaluationReport]) -> str:
    return json.dumps(comparison_rows(reports), indent=2, sort_keys=True)
