"""Synthetic stand-ins for the Memotion release, in its CSV layout.

``write_count_matched_csv`` produces a split whose class counts equal the
published tables (labels only, no images). ``make_toy_dataset`` produces a
small, learnable dataset with images, for end-to-end runs.
"""

from __future__ import annotations

import csv
import random
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .dataset import Task
from .split_counts import EXPECTED_COUNTS

HEADER = ["", "image_name", "text_ocr", "text_corrected", "humour", "sarcasm", "offensive", "motivational", "overall_sentiment"]

# raw strings per class index, matching DEFAULT_VOCABULARY
RAW = {
    Task.A: (("negative", "very_negative"), ("neutral",), ("positive", "very_positive")),
    Task.C_FUNNY: (("not_funny",), ("funny",), ("very_funny",), ("hilarious",)),
    Task.C_SARCASTIC: (("not_sarcastic",), ("general",), ("twisted_meaning",), ("very_twisted",)),
    Task.C_OFFENSIVE: (("not_offensive",), ("slight",), ("very_offensive",), ("hateful_offensive",)),
    Task.B_MOTIVATIONAL: (("not_motivational",), ("motivational",)),
}
_COLUMN = {
    Task.A: "overall_sentiment",
    Task.C_FUNNY: "humour",
    Task.C_SARCASTIC: "sarcasm",
    Task.C_OFFENSIVE: "offensive",
    Task.B_MOTIVATIONAL: "motivational",
}


def _label_column(task: Task, counts: Sequence[int], rng: random.Random) -> list[str]:
    values = []
    for idx, n in enumerate(counts):
        options = RAW[task][idx]
        values.extend(options[i % len(options)] for i in range(n))
    rng.shuffle(values)
    return values


def write_count_matched_csv(
    path: str | Path,
    split: str,
    counts: Mapping[Task, Sequence[int]] | None = None,
    seed: int = 0,
) -> int:
    """Write a labeled CSV whose per-class counts equal ``counts`` (default: published split)."""
    counts = counts or EXPECTED_COUNTS[split]
    rng = random.Random(seed)
    n = sum(counts[Task.A])
    columns = {task: _label_column(task, counts[task], rng) for task in RAW}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for i in range(n):
            row = {
                "": str(i),
                "image_name": f"{split}_{i}.jpg",
                "text_ocr": f'meme "{i}" text',
                "text_corrected": "" if i % 50 == 0 else f"Meme number {i}",
            }
            for task, col in _COLUMN.items():
                row[col] = columns[task][i]
            writer.writerow([row[h] for h in HEADER])
    return n


WORDS = ["cat", "dog", "boss", "school", "monday", "pizza", "friend", "work", "kid", "coffee", "game", "exam"]
SENTIMENT_WORDS = (["sad", "angry", "awful"], ["okay", "plain", "normal"], ["happy", "great", "love"])


def make_toy_dataset(
    root: str | Path,
    sizes: Mapping[str, int] | None = None,
    seed: int = 0,
    image_size: int = 16,
) -> dict[str, Path]:
    """Small learnable dataset: caption words and image colour depend on the labels.

    Writes ``<root>/images/`` and ``<root>/<split>.csv``; returns the CSV paths.
    """
    sizes = sizes or {"train": 48, "dev": 24, "test": 24}
    root = Path(root)
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    out = {}
    for split, n in sizes.items():
        path = root / f"{split}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(HEADER)
            for i in range(n):
                sentiment = i % 3
                scales = [(i // 3 + k) % 4 for k in range(3)]
                motivational = (i // 2) % 2
                caption = " ".join(
                    [rng.choice(SENTIMENT_WORDS[sentiment]), rng.choice(WORDS), rng.choice(WORDS)]
                    + ["very"] * scales[0]
                    + (["inspire"] if motivational else [])
                )
                colour = np.array(
                    [40 + 80 * sentiment, 30 + 60 * scales[1], 30 + 60 * scales[2]], dtype=np.float64
                )
                pixels = np.clip(colour + np_rng.normal(0, 8, size=(image_size, image_size, 3)), 0, 255)
                name = f"{split}_{i}.png"
                Image.fromarray(pixels.astype(np.uint8), "RGB").save(images / name)
                writer.writerow(
                    [
                        f"{split}{i}",
                        name,
                        caption.upper(),
                        caption,
                        RAW[Task.C_FUNNY][scales[0]][0],
                        RAW[Task.C_SARCASTIC][scales[1]][0],
                        RAW[Task.C_OFFENSIVE][scales[2]][0],
                        RAW[Task.B_MOTIVATIONAL][motivational][0],
                        RAW[Task.A][sentiment][0],
                    ]
                )
        out[split] = path
    return out
