"""Class-weighted mini-batch training with Adam and dev macro-F1 early stopping."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import ClassWeights, MemeRecord, Task, compute_class_weights, derive_target, uniform_weights
from .encoders import EncoderSpec, bert_spec, densenet_spec, resnet_spec, toy_counterpart
from .fusion_model import (
    DEFAULT_HIDDEN_DIM,
    MemeClassifier,
    ModelSpec,
    build_model,
    decide,
    save_checkpoint,
)
from .metrics import macro_f1

logger = logging.getLogger(__name__)

PROB_EPSILON = 1e-7
LOG_EPSILON = math.log(PROB_EPSILON)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    dropout_rate: float = 0.2
    l2_coefficient: float = 0.02
    class_weight_mode: str = "balanced"  # or "none"
    max_epochs: int = 20
    early_stop_patience: int = 3
    seed: int = 42
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int | None = None
    include_manual_text: bool = False

    def __post_init__(self):
        if self.class_weight_mode not in ("none", "balanced"):
            raise ValueError(f"class_weight_mode must be 'none' or 'balanced', got {self.class_weight_mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    def override(self, **changes) -> "TrainingConfig":
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ValueError(f"unknown TrainingConfig fields: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)


# -- presets ----------------------------------------------------------------

VARIANTS: dict[str, tuple[EncoderSpec | None, EncoderSpec | None]] = {
    "bert": (bert_spec(), None),
    "densenet": (None, densenet_spec()),
    "resnet": (None, resnet_spec()),
    "bert_densenet": (bert_spec(), densenet_spec()),
    "bert_resnet": (bert_spec(), resnet_spec()),
}
VARIANT_LABELS = {
    "bert": "BERT",
    "densenet": "DenseNet",
    "resnet": "ResNet",
    "bert_densenet": "BERT-DenseNet",
    "bert_resnet": "BERT-ResNet",
}

_UNIMODAL = dict(learning_rate=1e-6, dropout_rate=0.0, l2_coefficient=0.01)
_MULTIMODAL = dict(learning_rate=1e-6, dropout_rate=0.3, l2_coefficient=0.04)


@dataclass(frozen=True)
class Preset:
    name: str
    variant: str
    config: TrainingConfig

    def encoders(self, toy: bool = False) -> tuple[EncoderSpec | None, EncoderSpec | None]:
        text, image = VARIANTS[self.variant]
        if toy:
            text = None if text is None else toy_counterpart(text)
            image = None if image is None else toy_counterpart(image)
        return text, image

    def model_spec(self, task: Task | str, toy: bool = False, config: TrainingConfig | None = None) -> ModelSpec:
        config = config or self.config
        text, image = self.encoders(toy)
        return ModelSpec(
            task=Task.parse(task),
            text_encoder=text,
            image_encoder=image,
            hidden_dim=config.hidden_dim,
            dropout_rate=config.dropout_rate,
            l2_coefficient=config.l2_coefficient,
        )


PRESETS: dict[str, Preset] = {
    "submitted": Preset(
        "submitted",
        "bert_densenet",
        TrainingConfig(learning_rate=1e-5, batch_size=16, dropout_rate=0.2, l2_coefficient=0.02),
    ),
    "comparative_bert": Preset("comparative_bert", "bert", TrainingConfig(**_UNIMODAL)),
    "comparative_densenet": Preset("comparative_densenet", "densenet", TrainingConfig(**_UNIMODAL)),
    "comparative_resnet": Preset("comparative_resnet", "resnet", TrainingConfig(**_UNIMODAL)),
    "comparative_bert_densenet": Preset("comparative_bert_densenet", "bert_densenet", TrainingConfig(**_MULTIMODAL)),
    "comparative_bert_resnet": Preset("comparative_bert_resnet", "bert_resnet", TrainingConfig(**_MULTIMODAL)),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


# -- batching ---------------------------------------------------------------


def make_batches(records: Sequence, batch_size: int, seed: int) -> list[list]:
    """Shuffle with a seeded generator and cut into batches; the last may be partial."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    return [[records[i] for i in order[start : start + batch_size]] for start in range(0, len(order), batch_size)]


# -- loss -------------------------------------------------------------------


def per_example_loss(
    logits: torch.Tensor, targets: torch.Tensor, task: Task, weights: ClassWeights | None = None
) -> torch.Tensor:
    """Class-weighted cross-entropy per example.

    Log-probabilities are clamped below at log(1e-7), i.e. a target
    probability of 0 costs at most -log(1e-7) times the class weight.
    """
    targets = targets.long()
    if task.is_binary:
        z = logits.reshape(-1)
        log_p = torch.where(targets == 1, F.logsigmoid(z), F.logsigmoid(-z))
    else:
        log_p = F.log_softmax(logits, dim=-1).gather(1, targets.view(-1, 1)).squeeze(1)
    nll = -log_p.clamp(min=LOG_EPSILON)
    if weights is None:
        return nll
    if weights.task is not task:
        raise ValueError(f"class weights are for {weights.task.value}, not {task.value}")
    w = torch.tensor(weights.weights, dtype=nll.dtype)[targets]
    return w * nll


def weighted_loss(
    logits: torch.Tensor, targets: torch.Tensor, task: Task, weights: ClassWeights | None = None
) -> torch.Tensor:
    return per_example_loss(logits, targets, task, weights).mean()


def batch_loss(model: MemeClassifier, logits, targets, weights: ClassWeights | None) -> torch.Tensor:
    """Mean weighted cross-entropy plus the dense-layer L2 penalty."""
    return weighted_loss(logits, targets, model.task, weights) + model.l2_penalty()


def targets_for(records: Sequence[MemeRecord], task: Task) -> torch.Tensor:
    return torch.tensor([derive_target(r.labels, task).class_index for r in records], dtype=torch.long)


# -- training ---------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_macro_f1: float
    steps: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    model: MemeClassifier
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = float("nan")
    class_weights: ClassWeights | None = None
    steps: int = 0


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


class _Inputs:
    """Feeds batches to the model.

    With frozen encoders the fused embeddings are computed once per record and
    reused; otherwise inputs are decoded per batch.
    """

    def __init__(self, model: MemeClassifier, precompute: bool, chunk: int = 64):
        self.model = model
        self.precompute = precompute
        self.chunk = chunk
        self._cache: dict[str, torch.Tensor] = {}

    def _fill(self, records: Sequence[MemeRecord]) -> None:
        missing = [r for r in records if r.id not in self._cache]
        with torch.no_grad():
            for start in range(0, len(missing), self.chunk):
                part = missing[start : start + self.chunk]
                fused = self.model.embed(self.model.prepare(part))
                for r, row in zip(part, fused):
                    self._cache[r.id] = row

    def logits(self, records: Sequence[MemeRecord]) -> torch.Tensor:
        if not self.precompute:
            return self.model(self.model.prepare(records))
        self._fill(records)
        return self.model.head(torch.stack([self._cache[r.id] for r in records]))


@torch.no_grad()
def evaluate_records(
    model: MemeClassifier, records: Sequence[MemeRecord], threshold: float = 0.5, inputs: _Inputs | None = None
) -> tuple[float, list[int]]:
    """Macro-F1 of ``model`` on labeled records, plus the predicted classes."""
    inputs = inputs or _Inputs(model, precompute=False)
    was_training = model.training
    model.eval()
    preds: list[int] = []
    try:
        for start in range(0, len(records), 64):
            part = records[start : start + 64]
            probs = model.probabilities(inputs.logits(part)).double().numpy()
            preds.extend(decide(p, model.task, threshold) for p in probs)
    finally:
        model.train(was_training)
    truth = targets_for(records, model.task).tolist()
    return macro_f1(truth, preds, model.task.num_classes), preds


def train(
    spec: ModelSpec,
    config: TrainingConfig,
    train_records: Sequence[MemeRecord],
    dev_records: Sequence[MemeRecord],
    out_dir: str | Path | None = None,
    model: MemeClassifier | None = None,
) -> TrainResult:
    """Train one subtask model; returns the best-dev-F1 weights and the per-epoch history."""
    task = spec.task
    if not train_records:
        raise TrainingError("no training records")
    if not dev_records:
        raise TrainingError("no dev records for model selection")
    seed_everything(config.seed)
    if model is None:
        model = build_model(spec)
    weights = compute_class_weights(train_records, task) if config.class_weight_mode == "balanced" else uniform_weights(task)
    logger.info("training %s; class weights %s", task.value, weights.as_dict())

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        trainable, lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    inputs = _Inputs(model, precompute=model.encoders_frozen)
    train_records = list(train_records)
    dev_records = list(dev_records)

    result = TrainResult(model=model, class_weights=weights)
    best_state = None
    best_f1 = -1.0
    stale = 0
    history_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        history_fh = (out_dir / "history.jsonl").open("w", encoding="utf-8", newline="\n")

    try:
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            total, count = 0.0, 0
            for b, batch in enumerate(make_batches(train_records, config.batch_size, config.seed + epoch)):
                if config.max_steps is not None and result.steps >= config.max_steps:
                    break
                logits = inputs.logits(batch)
                loss = batch_loss(model, logits, targets_for(batch, task), weights)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}, "
                        f"learning rate {config.learning_rate}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                result.steps += 1
                total += loss.item() * len(batch)
                count += len(batch)
            if count == 0:
                break
            dev_f1, _ = evaluate_records(model, dev_records, inputs=inputs)
            stats = EpochStats(epoch, total / count, dev_f1, result.steps)
            result.history.append(stats)
            logger.info("epoch %d loss %.4f dev macro-F1 %.4f", epoch, stats.train_loss, dev_f1)
            if history_fh is not None:
                history_fh.write(json.dumps(stats.to_dict(), sort_keys=True) + "\n")
            if dev_f1 > best_f1:
                best_f1, best_state, stale = dev_f1, copy.deepcopy(model.state_dict()), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    finally:
        if history_fh is not None:
            history_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    result.best_dev_f1 = best_f1
    if out_dir is not None:
        save_checkpoint(
            model,
            out_dir / "checkpoint.pt",
            extra={"config": config.to_dict(), "best_epoch": result.best_epoch, "best_dev_macro_f1": best_f1},
        )
    return result
