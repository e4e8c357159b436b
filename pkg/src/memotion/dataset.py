"""Meme records, label vocabulary, text repair, subtask targets and class weights.

Class index orderings used everywhere in the package:

    A   (sentiment):            negative=0, neutral=1, positive=2
    B_* (binary):               no=0, yes=1
    C_* (intensity scales):     not=0, slightly=1, mildly=2, very=3
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class DatasetError(Exception):
    """Raised for unusable dataset input (missing files, bad schema, bad labels)."""


class Sentiment(str, Enum):
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    POSITIVE = "positive"


class Scale(str, Enum):
    NOT = "not"
    SLIGHTLY = "slightly"
    MILDLY = "mildly"
    VERY = "very"


SENTIMENT_ORDER = (Sentiment.NEGATIVE, Sentiment.NEUTRAL, Sentiment.POSITIVE)
SCALE_ORDER = (Scale.NOT, Scale.SLIGHTLY, Scale.MILDLY, Scale.VERY)


class Task(str, Enum):
    A = "A"
    B_FUNNY = "B_funny"
    B_SARCASTIC = "B_sarcastic"
    B_OFFENSIVE = "B_offensive"
    B_MOTIVATIONAL = "B_motivational"
    C_FUNNY = "C_funny"
    C_SARCASTIC = "C_sarcastic"
    C_OFFENSIVE = "C_offensive"

    @property
    def group(self) -> str:
        return self.value[0]

    @property
    def num_classes(self) -> int:
        return {"A": 3, "B": 2, "C": 4}[self.group]

    @property
    def is_binary(self) -> bool:
        return self.group == "B"

    @property
    def class_names(self) -> tuple[str, ...]:
        if self.group == "A":
            return tuple(s.value for s in SENTIMENT_ORDER)
        if self.group == "B":
            return ("no", "yes")
        return tuple(s.value for s in SCALE_ORDER)

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        if isinstance(value, Task):
            return value
        for task in cls:
            if value in (task.value, task.name) or value.lower() == task.value.lower():
                return task
        raise ValueError(f"unknown task {value!r}; valid: {', '.join(t.value for t in cls)}")


ALL_TASKS = tuple(Task)
TASK_GROUPS = {
    "A": (Task.A,),
    "B": (Task.B_FUNNY, Task.B_SARCASTIC, Task.B_OFFENSIVE, Task.B_MOTIVATIONAL),
    "C": (Task.C_FUNNY, Task.C_SARCASTIC, Task.C_OFFENSIVE),
}

# Scale field backing each B/C subtask (motivational has no scale).
_SCALE_FIELD = {
    Task.B_FUNNY: "funny_scale",
    Task.B_SARCASTIC: "sarcasm_scale",
    Task.B_OFFENSIVE: "offensive_scale",
    Task.C_FUNNY: "funny_scale",
    Task.C_SARCASTIC: "sarcasm_scale",
    Task.C_OFFENSIVE: "offensive_scale",
}


@dataclass(frozen=True)
class CanonicalLabels:
    sentiment: Sentiment
    funny_scale: Scale
    sarcasm_scale: Scale
    offensive_scale: Scale
    motivational: bool

    def to_dict(self) -> dict:
        return {
            "sentiment": self.sentiment.value,
            "funny_scale": self.funny_scale.value,
            "sarcasm_scale": self.sarcasm_scale.value,
            "offensive_scale": self.offensive_scale.value,
            "motivational": self.motivational,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CanonicalLabels":
        return cls(
            sentiment=Sentiment(d["sentiment"]),
            funny_scale=Scale(d["funny_scale"]),
            sarcasm_scale=Scale(d["sarcasm_scale"]),
            offensive_scale=Scale(d["offensive_scale"]),
            motivational=bool(d["motivational"]),
        )


@dataclass(frozen=True)
class MemeRecord:
    id: str
    image_path: str
    ocr_text: str | None = None
    corrected_text: str | None = None
    labels: CanonicalLabels | None = None
    needs_manual_text: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_path": self.image_path,
            "ocr_text": self.ocr_text,
            "corrected_text": self.corrected_text,
            "labels": None if self.labels is None else self.labels.to_dict(),
            "needs_manual_text": self.needs_manual_text,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MemeRecord":
        labels = d.get("labels")
        return cls(
            id=str(d["id"]),
            image_path=d["image_path"],
            ocr_text=d.get("ocr_text"),
            corrected_text=d.get("corrected_text"),
            labels=None if labels is None else CanonicalLabels.from_dict(labels),
            needs_manual_text=bool(d.get("needs_manual_text", False)),
        )


@dataclass(frozen=True)
class SubtaskTarget:
    task: Task
    class_index: int

    @property
    def num_classes(self) -> int:
        return self.task.num_classes

    def __post_init__(self):
        if not 0 <= self.class_index < self.task.num_classes:
            raise ValueError(f"class_index {self.class_index} out of range for {self.task.value}")


@dataclass(frozen=True)
class ClassWeights:
    task: Task
    weights: tuple[float, ...]

    def __getitem__(self, class_index: int) -> float:
        return self.weights[class_index]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.task.class_names, self.weights))


# ---------------------------------------------------------------------------
# Label vocabulary
# ---------------------------------------------------------------------------

# Raw strings of the public Memotion 7k release, plus the canonical names.
DEFAULT_VOCABULARY: dict[str, dict[str, str]] = {
    "sentiment": {
        "very_negative": "negative",
        "negative": "negative",
        "neutral": "neutral",
        "positive": "positive",
        "very_positive": "positive",
    },
    "funny_scale": {
        "not_funny": "not",
        "funny": "slightly",
        "very_funny": "mildly",
        "hilarious": "very",
    },
    "sarcasm_scale": {
        "not_sarcastic": "not",
        "general": "slightly",
        "twisted_meaning": "mildly",
        "very_twisted": "very",
    },
    "offensive_scale": {
        "not_offensive": "not",
        "slight": "slightly",
        "very_offensive": "mildly",
        "hateful_offensive": "very",
    },
    "motivational": {
        "not_motivational": "no",
        "motivational": "yes",
    },
}
for _name in ("funny_scale", "sarcasm_scale", "offensive_scale"):
    DEFAULT_VOCABULARY[_name].update({s.value: s.value for s in Scale})
DEFAULT_VOCABULARY["motivational"].update({"no": "no", "yes": "yes", "0": "no", "1": "yes"})

DEFAULT_COLUMNS: dict[str, str] = {
    "id": "",
    "image": "image_name",
    "ocr_text": "text_ocr",
    "corrected_text": "text_corrected",
    "funny_scale": "humour",
    "sarcasm_scale": "sarcasm",
    "offensive_scale": "offensive",
    "motivational": "motivational",
    "sentiment": "overall_sentiment",
}
LABEL_FIELDS = ("sentiment", "funny_scale", "sarcasm_scale", "offensive_scale", "motivational")


@dataclass
class ColumnMapping:
    """Maps CSV column names and raw label strings onto canonical fields.

    ``columns`` maps canonical field -> CSV header. An empty string for ``id``
    selects the (unnamed) first column of the official files; when the id
    column is absent the image filename stem is used.
    """

    columns: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    vocabulary: dict[str, dict[str, str]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_VOCABULARY.items()}
    )
    split_column: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnMapping":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        mapping = cls()
        mapping.columns.update(raw.get("columns", {}))
        for name, table in raw.get("vocabulary", {}).items():
            if raw.get("replace_vocabulary"):
                mapping.vocabulary[name] = dict(table)
            else:
                mapping.vocabulary.setdefault(name, {}).update(table)
        mapping.split_column = raw.get("split_column")
        return mapping

    def map_label(self, name: str, raw: str) -> str:
        key = raw.strip()
        table = self.vocabulary[name]
        if key in table:
            return table[key]
        if key.lower() in table:
            return table[key.lower()]
        raise KeyError(key)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    raw: dict | list | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class LoadedSplit(list):
    """A list of MemeRecord that also carries the rows rejected while loading."""

    def __init__(self, records: Iterable[MemeRecord] = (), rejects: Iterable[Reject] = ()):
        super().__init__(records)
        self.rejects: list[Reject] = list(rejects)


def _blank(value: str | None) -> str | None:
    if value is None:
        return None
    return value if value.strip() else None


def _parse_labels(row: Mapping[str, str], mapping: ColumnMapping) -> CanonicalLabels | None:
    present = [f for f in LABEL_FIELDS if _blank(row.get(mapping.columns.get(f, f))) is not None]
    if not present:
        return None
    if len(present) != len(LABEL_FIELDS):
        missing = sorted(set(LABEL_FIELDS) - set(present))
        raise ValueError(f"partially labeled row, missing {missing}")
    values = {}
    for name in LABEL_FIELDS:
        raw = row[mapping.columns.get(name, name)]
        try:
            values[name] = mapping.map_label(name, raw)
        except KeyError:
            raise ValueError(f"unknown {name} label {raw.strip()!r}") from None
    return CanonicalLabels(
        sentiment=Sentiment(values["sentiment"]),
        funny_scale=Scale(values["funny_scale"]),
        sarcasm_scale=Scale(values["sarcasm_scale"]),
        offensive_scale=Scale(values["offensive_scale"]),
        motivational=values["motivational"] == "yes",
    )


def load_split(
    csv_path: str | Path,
    image_dir: str | Path,
    split: str = "train",
    mapping: ColumnMapping | None = None,
) -> LoadedSplit:
    """Read one split of the competition CSV into MemeRecords.

    Rows that cannot be parsed (wrong field count, unknown label strings,
    partial labels) are collected in ``result.rejects`` instead of raising.
    When the mapping names a ``split_column`` only rows of ``split`` are kept.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    mapping = mapping or ColumnMapping()
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise DatasetError(f"CSV file not found: {csv_path}")
    image_dir = Path(image_dir)

    records: list[MemeRecord] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    cols = mapping.columns
    with csv_path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return LoadedSplit()
        image_col = cols.get("image", "image")
        if image_col not in header:
            raise DatasetError(f"{csv_path}: image column {image_col!r} not in header {header}")
        for row_values in reader:
            line = reader.line_num
            if not row_values or all(not v.strip() for v in row_values):
                continue
            if len(row_values) != len(header):
                rejects.append(
                    Reject(line, f"expected {len(header)} fields, got {len(row_values)}", row_values)
                )
                continue
            row = dict(zip(header, row_values))
            if mapping.split_column and row.get(mapping.split_column, "").strip() != split:
                continue
            image_name = row[image_col].strip()
            if not image_name:
                rejects.append(Reject(line, "empty image filename", row))
                continue
            id_col = cols.get("id", "id")
            rec_id = row.get(id_col, "").strip() if id_col in header else ""
            rec_id = rec_id or Path(image_name).stem
            if rec_id in seen:
                rejects.append(Reject(line, f"duplicate id {rec_id!r}", row))
                continue
            try:
                labels = _parse_labels(row, mapping)
            except ValueError as exc:
                rejects.append(Reject(line, str(exc), row))
                continue
            seen.add(rec_id)
            records.append(
                MemeRecord(
                    id=rec_id,
                    image_path=str(image_dir / image_name),
                    ocr_text=_blank(row.get(cols.get("ocr_text", "ocr_text"))),
                    corrected_text=_blank(row.get(cols.get("corrected_text", "corrected_text"))),
                    labels=labels,
                )
            )
    for rej in rejects:
        logger.warning("%s line %d rejected: %s", csv_path.name, rej.line, rej.reason)
    return LoadedSplit(records, rejects)


# ---------------------------------------------------------------------------
# Text repair
# ---------------------------------------------------------------------------

DOUBLE_QUOTES = '"“”„‟″＂'
_QUOTE_TABLE = str.maketrans("", "", DOUBLE_QUOTES)


def strip_double_quotes(text: str | None) -> str | None:
    if text is None:
        return None
    return text.translate(_QUOTE_TABLE)


def repair_text(record: MemeRecord) -> MemeRecord:
    """Remove double quotes and fill a missing corrected caption from OCR text.

    Records with neither text field are flagged ``needs_manual_text``.
    """
    ocr = _blank(strip_double_quotes(record.ocr_text))
    corrected = _blank(strip_double_quotes(record.corrected_text))
    if corrected is None and ocr is not None:
        corrected = ocr
    return dataclasses.replace(
        record,
        ocr_text=ocr,
        corrected_text=corrected,
        needs_manual_text=corrected is None,
    )


# ---------------------------------------------------------------------------
# Targets and class weights
# ---------------------------------------------------------------------------


def derive_target(labels: CanonicalLabels, task: Task | str) -> SubtaskTarget:
    task = Task.parse(task)
    if task is Task.A:
        return SubtaskTarget(task, SENTIMENT_ORDER.index(labels.sentiment))
    if task is Task.B_MOTIVATIONAL:
        return SubtaskTarget(task, int(labels.motivational))
    scale = getattr(labels, _SCALE_FIELD[task])
    if task.group == "B":
        return SubtaskTarget(task, int(scale is not Scale.NOT))
    return SubtaskTarget(task, SCALE_ORDER.index(scale))


def class_counts(records: Sequence[MemeRecord], task: Task | str) -> list[int]:
    task = Task.parse(task)
    counts = [0] * task.num_classes
    for rec in records:
        if rec.labels is None:
            raise DatasetError(f"record {rec.id} has no labels")
        counts[derive_target(rec.labels, task).class_index] += 1
    return counts


def balanced_weights(counts: Sequence[int], task: Task | str) -> ClassWeights:
    """N / (K * n_c) for each class c."""
    task = Task.parse(task)
    if len(counts) != task.num_classes:
        raise ValueError(f"{task.value} has {task.num_classes} classes, got {len(counts)} counts")
    for name, n in zip(task.class_names, counts):
        if n <= 0:
            raise DatasetError(f"class {name!r} of {task.value} has no examples; weight undefined")
    total = sum(counts)
    k = len(counts)
    return ClassWeights(task, tuple(total / (k * n) for n in counts))


def compute_class_weights(records: Sequence[MemeRecord], task: Task | str) -> ClassWeights:
    return balanced_weights(class_counts(records, task), task)


def uniform_weights(task: Task | str) -> ClassWeights:
    task = Task.parse(task)
    return ClassWeights(task, (1.0,) * task.num_classes)


# ---------------------------------------------------------------------------
# Record store (line-delimited JSON, one file per split)
# ---------------------------------------------------------------------------


def save_records(records: Iterable[MemeRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_records(path: str | Path) -> list[MemeRecord]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"record file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return [MemeRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def load_store(store_dir: str | Path) -> dict[str, list[MemeRecord]]:
    """Load every ``<split>.jsonl`` present in a record store directory."""
    store_dir = Path(store_dir)
    if not store_dir.is_dir():
        raise DatasetError(f"record store not found: {store_dir}")
    splits = {s: read_records(store_dir / f"{s}.jsonl") for s in SPLITS if (store_dir / f"{s}.jsonl").is_file()}
    if not splits:
        raise DatasetError(f"no split files (train/dev/test .jsonl) in {store_dir}")
    return splits


def trainable_records(records: Iterable[MemeRecord], include_manual: bool = False) -> list[MemeRecord]:
    """Labeled records usable for training; ``needs_manual_text`` ones are dropped by default."""
    out = [r for r in records if r.labels is not None]
    if not include_manual:
        out = [r for r in out if not r.needs_manual_text]
    return out
