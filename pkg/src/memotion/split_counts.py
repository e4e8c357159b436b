"""Per-split class counts of the public Memotion release and a checker against them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .dataset import ALL_TASKS, DatasetError, MemeRecord, Task, class_counts

# Class counts indexed by the package's class ordering (see ``dataset``).
EXPECTED_COUNTS: dict[str, dict[Task, tuple[int, ...]]] = {
    "train": {
        Task.A: (469, 1634, 3089),
        Task.B_FUNNY: (1219, 3973),
        Task.B_SARCASTIC: (1148, 4044),
        Task.B_OFFENSIVE: (2011, 3181),
        Task.B_MOTIVATIONAL: (3355, 1837),
        Task.C_FUNNY: (1219, 1822, 1662, 489),
        Task.C_SARCASTIC: (1148, 2607, 1151, 286),
        Task.C_OFFENSIVE: (2011, 1926, 1088, 167),
    },
    "dev": {
        Task.A: (162, 567, 1071),
        Task.B_FUNNY: (432, 1368),
        Task.B_SARCASTIC: (396, 1404),
        Task.B_OFFENSIVE: (702, 1098),
        Task.B_MOTIVATIONAL: (1170, 630),
        Task.C_FUNNY: (432, 630, 576, 162),
        Task.C_SARCASTIC: (396, 900, 396, 108),
        Task.C_OFFENSIVE: (702, 666, 378, 54),
    },
    "test": {
        Task.A: (173, 594, 1111),
        Task.B_FUNNY: (445, 1433),
        Task.B_SARCASTIC: (421, 1457),
        Task.B_OFFENSIVE: (707, 1171),
        Task.B_MOTIVATIONAL: (690, 1188),
        Task.C_FUNNY: (445, 654, 605, 174),
        Task.C_SARCASTIC: (421, 937, 424, 96),
        Task.C_OFFENSIVE: (707, 709, 387, 75),
    },
}

SPLIT_SIZES = {"train": 5192, "dev": 1800, "test": 1878}

BINARIZED_PAIRS = (
    (Task.B_FUNNY, Task.C_FUNNY),
    (Task.B_SARCASTIC, Task.C_SARCASTIC),
    (Task.B_OFFENSIVE, Task.C_OFFENSIVE),
)


@dataclass(frozen=True)
class CountCell:
    split: str
    task: Task
    class_name: str
    observed: int
    expected: int

    @property
    def ok(self) -> bool:
        return self.observed == self.expected


@dataclass
class SplitCountReport:
    cells: list[CountCell] = field(default_factory=list)
    identity_failures: list[str] = field(default_factory=list)
    counts: dict[str, dict[Task, list[int]]] = field(default_factory=dict)

    @property
    def deviations(self) -> list[CountCell]:
        return [c for c in self.cells if not c.ok]

    @property
    def passed(self) -> bool:
        return not self.deviations and not self.identity_failures

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "counts": {
                split: {task.value: counts for task, counts in per_task.items()}
                for split, per_task in self.counts.items()
            },
            "deviations": [
                {
                    "split": c.split,
                    "task": c.task.value,
                    "class": c.class_name,
                    "observed": c.observed,
                    "expected": c.expected,
                }
                for c in self.deviations
            ],
            "identity_failures": list(self.identity_failures),
        }

    def render(self) -> str:
        lines = []
        for split, per_task in self.counts.items():
            lines.append(f"[{split}]")
            for task, counts in per_task.items():
                cells = " ".join(f"{n}={c}" for n, c in zip(task.class_names, counts))
                lines.append(f"  {task.value:<15} {cells}")
        for c in self.deviations:
            lines.append(
                f"MISMATCH {c.split}/{c.task.value}/{c.class_name}: observed {c.observed}, expected {c.expected}"
            )
        lines.extend(f"IDENTITY {msg}" for msg in self.identity_failures)
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def check_binarization(counts: Mapping[Task, Sequence[int]], label: str = "") -> list[str]:
    """B_x "yes" must equal the C_x count of every level above "not"."""
    failures = []
    for b_task, c_task in BINARIZED_PAIRS:
        if b_task not in counts or c_task not in counts:
            continue
        b, c = counts[b_task], counts[c_task]
        if b[0] != c[0] or b[1] != sum(c[1:]):
            failures.append(
                f"{label}{b_task.value} (no={b[0]}, yes={b[1]}) vs {c_task.value} "
                f"(not={c[0]}, above={sum(c[1:])})"
            )
    return failures


def verify_split_counts(
    splits: Mapping[str, Sequence[MemeRecord]],
    expected: Mapping[str, Mapping[Task, Sequence[int]]] = EXPECTED_COUNTS,
) -> SplitCountReport:
    report = SplitCountReport()
    for split, records in splits.items():
        if any(r.labels is None for r in records):
            raise DatasetError(f"labels required: split {split!r} contains unlabeled records")
        per_task = {task: class_counts(records, task) for task in ALL_TASKS}
        report.counts[split] = per_task
        report.identity_failures.extend(check_binarization(per_task, f"{split}: "))
        ref = expected.get(split)
        if ref is None:
            continue
        for task in ALL_TASKS:
            for name, obs, exp in zip(task.class_names, per_task[task], ref[task]):
                report.cells.append(CountCell(split, task, name, obs, exp))
    return report
