"""Command-line entry point: preprocess, verify, train, evaluate, compare, predict.

Exit codes: 0 success (possibly with warnings), 1 verification/validation
failure, 2 fatal I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import (
    ALL_TASKS,
    SPLITS,
    ColumnMapping,
    DatasetError,
    MemeRecord,
    Task,
    load_split,
    load_store,
    repair_text,
    save_records,
    trainable_records,
)
from .encoders import EncoderError
from .experiments import parse_models, run_comparison
from .fusion_model import CheckpointError, ModalityError, load_checkpoint, predict
from .metrics import aggregate
from .split_counts import verify_split_counts
from .trainer import PRESETS, TrainingError, evaluate_records, get_preset, train

logger = logging.getLogger("memotion")

EXIT_OK, EXIT_FAIL, EXIT_FATAL = 0, 1, 2

BINARY_LABELS = {
    Task.B_FUNNY: ("not_funny", "funny"),
    Task.B_SARCASTIC: ("not_sarcastic", "sarcastic"),
    Task.B_OFFENSIVE: ("not_offensive", "offensive"),
    Task.B_MOTIVATIONAL: ("not_motivational", "motivational"),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FATAL):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    command: str
    config_preset: str
    seed: int
    input_paths: list[str]
    output_dir: str
    timestamp: str
    version: str = __version__


def write_manifest(args, command: str, inputs: Sequence[str | Path]) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=command,
        config_preset=getattr(args, "preset", None) or "",
        seed=args.seed,
        input_paths=[str(p) for p in inputs],
        output_dir=str(out_dir),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_config(path: str | None) -> dict:
    """JSON file of TrainingConfig overrides; a "presets" key holds per-preset overrides."""
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return data


def overrides_for(config: dict, preset: str | None = None) -> dict:
    out = {k: v for k, v in config.items() if k != "presets"}
    if preset:
        out.update(config.get("presets", {}).get(preset, {}))
    return out


def _load_store(path) -> dict[str, list[MemeRecord]]:
    try:
        return load_store(path)
    except DatasetError as exc:
        raise CliError(str(exc)) from exc


# -- commands -----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    csv_path, image_dir = Path(args.raw_csv), Path(args.image_dir)
    if not csv_path.is_file():
        raise CliError(f"CSV not found: {csv_path}")
    if not image_dir.is_dir():
        raise CliError(f"image directory not found: {image_dir}")
    write_manifest(args, "preprocess", [csv_path, image_dir])
    try:
        mapping = ColumnMapping.from_file(args.mapping) if args.mapping else ColumnMapping()
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read mapping file {args.mapping}: {exc}") from exc
    try:
        loaded = load_split(csv_path, image_dir, args.split, mapping)
    except (DatasetError, UnicodeDecodeError) as exc:
        raise CliError(str(exc)) from exc
    records = [repair_text(r) for r in loaded]
    out_dir = Path(args.out_dir)
    save_records(records, out_dir / f"{args.split}.jsonl")
    manual = [r.id for r in records if r.needs_manual_text]
    report = {
        "split": args.split,
        "records": len(records),
        "rejects": [r.to_dict() for r in loaded.rejects],
        "needs_manual_text": manual,
    }
    (out_dir / f"{args.split}.rejects.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    print(f"{args.split}: {len(records)} records written, {len(loaded.rejects)} rejected, {len(manual)} need manual text")
    if loaded.rejects:
        logger.warning("%d row(s) rejected; see %s.rejects.json", len(loaded.rejects), args.split)
    return EXIT_OK


def cmd_verify(args) -> int:
    splits = _load_store(args.record_store)
    try:
        report = verify_split_counts(splits)
    except DatasetError as exc:
        print(f"error: labels required ({exc})", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True) if args.json else report.render())
    return EXIT_OK if report.passed else EXIT_FAIL


def _preset_config(args, preset_name: str):
    preset = get_preset(preset_name)
    cfg = overrides_for(read_config(args.config), preset_name)
    cfg["seed"] = args.seed
    try:
        return preset, preset.config.override(**cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc


def _tasks(value: str | None) -> list[Task]:
    if value in (None, "all"):
        return list(ALL_TASKS)
    try:
        return [Task.parse(v.strip()) for v in value.split(",")]
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_train(args) -> int:
    if args.preset not in PRESETS:
        raise CliError(f"unknown preset {args.preset!r}; valid presets: {', '.join(PRESETS)}")
    preset, config = _preset_config(args, args.preset)
    tasks = _tasks(args.task)
    splits = _load_store(args.record_store)
    if "train" not in splits or "dev" not in splits:
        raise CliError("record store needs train and dev splits")
    write_manifest(args, "train", [args.record_store])
    train_recs = trainable_records(splits["train"], config.include_manual_text)
    dev_recs = trainable_records(splits["dev"], config.include_manual_text)
    for task in tasks:
        spec = preset.model_spec(task, toy=args.toy_encoders, config=config)
        result = train(spec, config, train_recs, dev_recs, out_dir=Path(args.out_dir) / task.value)
        print(f"{task.value}: best epoch {result.best_epoch}, dev macro-F1 {result.best_dev_f1:.4f}")
    return EXIT_OK


def _checkpoint_paths(path: str | Path, tasks: Sequence[Task] | None) -> dict[Task, Path]:
    path = Path(path)
    if path.is_file():
        return {None: path}
    found = {t: path / t.value / "checkpoint.pt" for t in ALL_TASKS if (path / t.value / "checkpoint.pt").is_file()}
    if tasks is not None:
        missing = [t.value for t in tasks if t not in found]
        if missing:
            raise CliError(f"no checkpoint for {', '.join(missing)} under {path}")
        found = {t: found[t] for t in tasks}
    if not found:
        raise CliError(f"no checkpoints found under {path}")
    return found


def cmd_evaluate(args) -> int:
    splits = _load_store(args.record_store)
    if args.split not in splits:
        raise CliError(f"split {args.split!r} not in record store")
    records = trainable_records(splits[args.split], include_manual=True)
    write_manifest(args, "evaluate", [args.record_store, args.checkpoints])
    per_subtask = {}
    for _, path in _checkpoint_paths(args.checkpoints, None).items():
        model, _ = load_checkpoint(path)
        recs = records if model.text_encoder is None else [r for r in records if r.corrected_text is not None]
        per_subtask[model.task] = evaluate_records(model, recs, args.threshold)[0]
        print(f"{model.task.value}: macro-F1 {per_subtask[model.task]:.4f}")
    out = {"split": args.split, "per_subtask": {t.value: s for t, s in per_subtask.items()}}
    if len(per_subtask) == len(ALL_TASKS):
        report = aggregate(per_subtask)
        out.update(report.to_dict())
        print(f"Task A {report.task_a_score:.4f}  Task B {report.task_b_score:.4f}  Task C {report.task_c_score:.4f}")
    (Path(args.out_dir) / "evaluation.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        models = parse_models(args.models)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    splits = _load_store(args.record_store)
    for split in ("train", "dev"):
        if split not in splits:
            raise CliError(f"record store lacks the {split} split")
    write_manifest(args, "compare", [args.record_store])
    config = read_config(args.config)
    _, runs = run_comparison(
        splits, models, toy=args.toy_encoders, seed=args.seed, overrides=overrides_for(config), out_dir=args.out_dir
    )
    print((Path(args.out_dir) / "comparison.txt").read_text(encoding="utf-8"), end="")
    failed = [r.variant for r in runs if r.error is not None]
    if failed:
        logger.warning("failed variants: %s", ", ".join(failed))
    return EXIT_OK


def label_name(task: Task, class_index: int) -> str:
    if task in BINARY_LABELS:
        return BINARY_LABELS[task][class_index]
    return task.class_names[class_index]


def cmd_predict(args) -> int:
    tasks = None if args.tasks in (None, "all") else _tasks(args.tasks)
    record = MemeRecord(id="input", image_path=args.image or "", corrected_text=args.caption)
    if args.image and not Path(args.image).is_file():
        raise CliError(f"image not found: {args.image}")
    out = {}
    for _, path in _checkpoint_paths(args.checkpoint, tasks).items():
        model, _ = load_checkpoint(path)
        try:
            pred = predict(model, record, args.threshold)
        except ModalityError as exc:
            print(f"error: modality missing for {model.task.value}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        out[model.task.value] = {
            "label": label_name(model.task, pred.class_index),
            "class_index": pred.class_index,
            "probability": pred.probability,
        }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="seed for every stochastic component")
    common.add_argument("--out-dir", default="runs/latest", help="output directory")
    common.add_argument("--config", help="JSON file of training-config overrides")
    common.add_argument("--toy-encoders", action="store_true", help="use deterministic toy encoders")
    common.add_argument("--threshold", type=float, default=0.5, help="sigmoid decision threshold")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="memotion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="load a raw CSV, repair captions, write a record store")
    p.add_argument("raw_csv")
    p.add_argument("image_dir")
    p.add_argument("--split", choices=SPLITS, default="train")
    p.add_argument("--mapping", help="JSON column/vocabulary mapping file")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("verify", parents=[common], help="check split class counts against the published tables")
    p.add_argument("record_store")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", parents=[common], help="train subtask models with a named preset")
    p.add_argument("record_store")
    p.add_argument("--preset", default="submitted")
    p.add_argument("--task", default="all", help="task tag, comma list, or 'all'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score trained checkpoints on a split")
    p.add_argument("record_store")
    p.add_argument("checkpoints", help="checkpoint file or directory of <task>/checkpoint.pt")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="run the five-variant ablation")
    p.add_argument("record_store")
    p.add_argument("--models", help="comma list of bert,densenet,resnet,bert_densenet,bert_resnet")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", parents=[common], help="predict all subtasks for one meme")
    p.add_argument("checkpoint")
    p.add_argument("--image")
    p.add_argument("--caption")
    p.add_argument("--tasks", help="comma list of task tags (default: all available)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, CheckpointError, EncoderError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
