"""Concatenation-fusion classifier: encoders -> concat -> dense -> dropout -> task head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import MemeRecord, Task
from .encoders import (
    DEFAULT_MAX_LENGTH,
    EmbeddingVector,
    EncoderSpec,
    Modality,
    build_encoder,
    pad_encodings,
    preprocess_for,
)

CHECKPOINT_FORMAT = "memotion-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN_DIM = 256
DEFAULT_THRESHOLD = 0.5


class SpecError(ValueError):
    """A ModelSpec violates one of its invariants."""


class ModalityError(ValueError):
    """A record lacks an input the model needs (caption or image)."""


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class ModelSpec:
    task: Task
    text_encoder: EncoderSpec | None = None
    image_encoder: EncoderSpec | None = None
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    dropout_rate: float = 0.0
    l2_coefficient: float = 0.0
    max_length: int = DEFAULT_MAX_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))

    def validate(self) -> None:
        if self.text_encoder is None and self.image_encoder is None:
            raise SpecError("at least one encoder must be present")
        if self.text_encoder is not None and self.text_encoder.modality is not Modality.TEXT:
            raise SpecError(f"text_encoder has non-text kind {self.text_encoder.kind.value}")
        if self.image_encoder is not None and self.image_encoder.modality is not Modality.IMAGE:
            raise SpecError(f"image_encoder has non-image kind {self.image_encoder.kind.value}")
        if self.hidden_dim <= 0:
            raise SpecError("hidden_dim must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecError("dropout_rate must lie in [0, 1)")
        if self.l2_coefficient < 0:
            raise SpecError("l2_coefficient must be non-negative")
        if self.max_length < 3:
            raise SpecError("max_length must be at least 3")

    @property
    def fused_dim(self) -> int:
        return sum(e.output_dim for e in (self.text_encoder, self.image_encoder) if e is not None)

    @property
    def output_dim(self) -> int:
        return 1 if self.task.is_binary else self.task.num_classes

    @property
    def activation(self) -> str:
        return "sigmoid" if self.task.is_binary else "softmax"

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "text_encoder": None if self.text_encoder is None else self.text_encoder.to_dict(),
            "image_encoder": None if self.image_encoder is None else self.image_encoder.to_dict(),
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "l2_coefficient": self.l2_coefficient,
            "max_length": self.max_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("text_encoder", "image_encoder"):
            if d.get(key) is not None:
                d[key] = EncoderSpec.from_dict(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Prediction:
    task: Task
    probabilities: tuple[float, ...]  # one entry for sigmoid tasks
    class_index: int

    @property
    def probability(self) -> float:
        """Probability of the predicted class (or of "yes" for sigmoid tasks)."""
        if self.task.is_binary:
            return self.probabilities[0]
        return self.probabilities[self.class_index]


def fuse(text_emb: EmbeddingVector | None, image_emb: EmbeddingVector | None) -> EmbeddingVector:
    """Concatenate text then image embeddings."""
    parts = []
    if text_emb is not None:
        if text_emb.modality is not Modality.TEXT:
            raise ValueError(f"text slot got a {text_emb.modality.value} embedding")
        parts.append(text_emb.values)
    if image_emb is not None:
        if image_emb.modality is not Modality.IMAGE:
            raise ValueError(f"image slot got a {image_emb.modality.value} embedding")
        parts.append(image_emb.values)
    if not parts:
        raise ValueError("fuse needs at least one embedding")
    return EmbeddingVector(Modality.FUSED, np.concatenate(parts))


def decide(probabilities: Sequence[float], task: Task, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Sigmoid: 1 iff p >= threshold. Softmax: argmax, lowest index on ties."""
    if task.is_binary:
        return int(probabilities[0] >= threshold)
    return int(np.argmax(np.asarray(probabilities)))


@dataclass
class Batch:
    token_ids: torch.Tensor | None = None
    segment_ids: torch.Tensor | None = None
    attention_mask: torch.Tensor | None = None
    images: torch.Tensor | None = None


class MemeClassifier(nn.Module):
    def __init__(self, spec: ModelSpec, load_pretrained: bool = True):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.text_encoder = None if spec.text_encoder is None else build_encoder(spec.text_encoder, load_pretrained)
        self.image_encoder = None if spec.image_encoder is None else build_encoder(spec.image_encoder, load_pretrained)
        self.dense = nn.Linear(spec.fused_dim, spec.hidden_dim)
        self.dropout = nn.Dropout(spec.dropout_rate)
        self.output = nn.Linear(spec.hidden_dim, spec.output_dim)

    @property
    def task(self) -> Task:
        return self.spec.task

    @property
    def encoders(self) -> list:
        return [e for e in (self.text_encoder, self.image_encoder) if e is not None]

    @property
    def encoders_frozen(self) -> bool:
        return all(e.frozen for e in self.encoders)

    # -- inputs ---------------------------------------------------------------

    def prepare(self, records: Sequence[MemeRecord]) -> Batch:
        """Tokenize captions and decode images for the branches this model has."""
        batch = Batch()
        if self.text_encoder is not None:
            encs = []
            for r in records:
                if r.corrected_text is None:
                    raise ModalityError(f"record {r.id} has no caption for the text branch")
                encs.append(self.text_encoder.tokenize(r.corrected_text, self.spec.max_length))
            batch.token_ids, batch.segment_ids, batch.attention_mask = pad_encodings(
                encs, self.text_encoder.tokenizer.pad_id
            )
        if self.image_encoder is not None:
            imgs = []
            for r in records:
                if not r.image_path:
                    raise ModalityError(f"record {r.id} has no image for the image branch")
                imgs.append(preprocess_for(self.image_encoder, r.image_path))
            batch.images = torch.stack(imgs)
        return batch

    # -- forward --------------------------------------------------------------

    def embed(self, batch: Batch) -> torch.Tensor:
        parts = []
        if self.text_encoder is not None:
            parts.append(self.text_encoder(batch.token_ids, batch.segment_ids, batch.attention_mask))
        if self.image_encoder is not None:
            parts.append(self.image_encoder(batch.images))
        fused = torch.cat(parts, dim=1) if len(parts) > 1 else parts[0]
        return fused.to(self.dense.weight.dtype)

    def head(self, fused: torch.Tensor) -> torch.Tensor:
        hidden = F.relu(self.dense(fused))
        return self.output(self.dropout(hidden))

    def forward(self, batch: Batch) -> torch.Tensor:
        """Logits; shape (B, 1) for sigmoid tasks, (B, K) for softmax tasks."""
        return self.head(self.embed(batch))

    def probabilities(self, logits: torch.Tensor) -> torch.Tensor:
        if self.task.is_binary:
            return torch.sigmoid(logits)
        return torch.softmax(logits, dim=-1)

    def l2_penalty(self) -> torch.Tensor:
        return self.spec.l2_coefficient * self.dense.weight.pow(2).sum()


def build_model(spec: ModelSpec, load_pretrained: bool = True) -> MemeClassifier:
    return MemeClassifier(spec, load_pretrained)


def dense_parameter_count(model: MemeClassifier) -> int:
    return sum(p.numel() for p in model.dense.parameters())


@torch.no_grad()
def predict_batch(
    model: MemeClassifier, records: Sequence[MemeRecord], threshold: float = DEFAULT_THRESHOLD
) -> list[Prediction]:
    was_training = model.training
    model.eval()
    try:
        probs = model.probabilities(model(model.prepare(records))).double().numpy()
    finally:
        model.train(was_training)
    return [Prediction(model.task, tuple(float(x) for x in p), decide(p, model.task, threshold)) for p in probs]


def predict(model: MemeClassifier, record: MemeRecord, threshold: float = DEFAULT_THRESHOLD) -> Prediction:
    return predict_batch(model, [record], threshold)[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: MemeClassifier, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_spec": model.spec.to_dict(),
            "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[MemeClassifier, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
    spec = ModelSpec.from_dict(blob["model_spec"])
    model = MemeClassifier(spec, load_pretrained=False)
    dtype = blob["state_dict"]["dense.weight"].dtype
    model.to(dtype)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("extra", {})


def spec_summary(spec: ModelSpec) -> str:
    enc = "+".join(e.kind.value for e in (spec.text_encoder, spec.image_encoder) if e is not None)
    return f"{spec.task.value}[{enc}] fused={spec.fused_dim} hidden={spec.hidden_dim} -> {spec.output_dim} {spec.activation}"


def replace_task(spec: ModelSpec, task: Task) -> ModelSpec:
    return dataclasses.replace(spec, task=task)
