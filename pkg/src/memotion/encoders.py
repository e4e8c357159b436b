"""Text and image encoders producing fixed-size embeddings.

Pretrained kinds wrap a BERT-base (cased) transformer and the torchvision
DenseNet-121 / ResNet-50 backbones. Toy kinds are parameter-free and
deterministic so the whole pipeline can run without weight downloads.

Weight references are either a local path or a registry name. Downloads go to
``$MEMOTION_WEIGHTS_DIR`` when set.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import string
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageFile, UnidentifiedImageError
from torch import nn

logger = logging.getLogger(__name__)

WEIGHTS_DIR_ENV = "MEMOTION_WEIGHTS_DIR"
DEFAULT_MAX_LENGTH = 128
DEFAULT_IMAGE_SIZE = 224
TOY_IMAGE_SIZE = 32

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TEXT_REGISTRY = {
    "bert-base-cased": "bert-base-cased",
    "BERT-cased_L-12_H-768_A-12": "bert-base-cased",
    "cased_L-12_H-768_A-12": "bert-base-cased",
}
IMAGE_REGISTRY = {"imagenet"}


class EncoderError(Exception):
    """Raised for invalid encoder input or configuration."""


class ImageDecodeError(EncoderError):
    """The file is not a decodable image (as opposed to merely truncated)."""


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    FUSED = "fused"


class EncoderKind(str, Enum):
    TRANSFORMER_TEXT = "transformer_text"
    DENSE_CNN = "dense_cnn"
    RESIDUAL_CNN = "residual_cnn"
    TOY_TEXT = "toy_text"
    TOY_IMAGE = "toy_image"

    @property
    def modality(self) -> Modality:
        if self in (EncoderKind.TRANSFORMER_TEXT, EncoderKind.TOY_TEXT):
            return Modality.TEXT
        return Modality.IMAGE

    @property
    def is_toy(self) -> bool:
        return self in (EncoderKind.TOY_TEXT, EncoderKind.TOY_IMAGE)


NATIVE_DIMS = {
    EncoderKind.TRANSFORMER_TEXT: 768,
    EncoderKind.DENSE_CNN: 1024,
    EncoderKind.RESIDUAL_CNN: 2048,
}


@dataclass(frozen=True)
class EncoderSpec:
    kind: EncoderKind
    output_dim: int
    pretrained_weights: str | None = None
    trainable: bool = False
    image_size: int = DEFAULT_IMAGE_SIZE
    seed: int = 0  # toy_image projection seed

    def __post_init__(self):
        object.__setattr__(self, "kind", EncoderKind(self.kind))
        if self.output_dim <= 0:
            raise EncoderError("output_dim must be positive")
        native = NATIVE_DIMS.get(self.kind)
        if native is not None and self.output_dim != native:
            raise EncoderError(f"{self.kind.value} has a fixed output_dim of {native}, got {self.output_dim}")

    @property
    def modality(self) -> Modality:
        return self.kind.modality

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


def bert_spec(weights: str | None = "bert-base-cased", trainable: bool = True) -> EncoderSpec:
    return EncoderSpec(EncoderKind.TRANSFORMER_TEXT, 768, weights, trainable)


def densenet_spec(weights: str | None = "imagenet", trainable: bool = True) -> EncoderSpec:
    return EncoderSpec(EncoderKind.DENSE_CNN, 1024, weights, trainable)


def resnet_spec(weights: str | None = "imagenet", trainable: bool = True) -> EncoderSpec:
    return EncoderSpec(EncoderKind.RESIDUAL_CNN, 2048, weights, trainable)


def toy_text_spec(output_dim: int = 768) -> EncoderSpec:
    return EncoderSpec(EncoderKind.TOY_TEXT, output_dim)


def toy_image_spec(output_dim: int = 1024, seed: int = 1, image_size: int = TOY_IMAGE_SIZE) -> EncoderSpec:
    return EncoderSpec(EncoderKind.TOY_IMAGE, output_dim, seed=seed, image_size=image_size)


def toy_counterpart(spec: EncoderSpec) -> EncoderSpec:
    """Toy encoder with the same output size as a pretrained one."""
    if spec.kind.is_toy:
        return spec
    if spec.kind is EncoderKind.TRANSFORMER_TEXT:
        return toy_text_spec(spec.output_dim)
    seed = 1 if spec.kind is EncoderKind.DENSE_CNN else 2
    return toy_image_spec(spec.output_dim, seed=seed)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextEncoding:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    modality: Modality
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise EncoderError("embedding must have positive dimension")
        if not np.all(np.isfinite(values)):
            raise EncoderError("embedding contains non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

_FALLBACK_WORDS = """
the a an and or but if of to in on at by for with from as is are was were be been
not no yes do does did doing done have has had will would can could should may
i me my you your he she it we they them his her its our their this that these those
what when where who why how all any some one two three more most very so just
only also than then too up down out over again now here there get got go going
make made know think see look want like love funny meme memes when people time day
simply say said good bad new old first last never always everyone nobody nothing
something really because about after before into through life world man woman
kid kids friend friends school work boss guy girl boy dog cat mom dad face
""".split()
_FALLBACK_SUFFIXES = ("s", "es", "ed", "ing", "ly", "er", "est", "tion", "ness", "ment", "able")


@lru_cache(maxsize=1)
def fallback_vocabulary() -> tuple[str, ...]:
    """Small cased WordPiece vocabulary covering every printable ASCII character.

    Any ASCII word decomposes into known sub-words, so the unknown token only
    appears for characters outside this set.
    """
    vocab = list(SPECIAL_TOKENS)
    seen = set(vocab)

    def add(tok: str) -> None:
        if tok not in seen:
            seen.add(tok)
            vocab.append(tok)

    chars = [c for c in string.printable if not c.isspace()]
    for c in chars:
        add(c)
    for c in chars:
        add("##" + c)
    for w in _FALLBACK_WORDS:
        add(w)
        add(w.capitalize())
    for suf in _FALLBACK_SUFFIXES:
        add("##" + suf)
    return tuple(vocab)


class WordPieceTokenizer:
    """Cased WordPiece tokenizer producing single-segment [CLS] ... [SEP] encodings."""

    def __init__(self, backend):
        self._backend = backend
        self.cls_id = backend.token_to_id("[CLS]")
        self.sep_id = backend.token_to_id("[SEP]")
        self.unk_id = backend.token_to_id("[UNK]")
        self.pad_id = backend.token_to_id("[PAD]")
        if None in (self.cls_id, self.sep_id, self.unk_id, self.pad_id):
            raise EncoderError("vocabulary lacks one of [CLS], [SEP], [UNK], [PAD]")

    @classmethod
    def from_vocab(cls, vocab: Sequence[str] | str | Path) -> "WordPieceTokenizer":
        from tokenizers import BertWordPieceTokenizer

        if isinstance(vocab, (str, Path)):
            vocab = Path(vocab).read_text(encoding="utf-8").splitlines()
        vocab = {tok.rstrip("\n"): i for i, tok in enumerate(vocab)}
        return cls(BertWordPieceTokenizer(vocab, lowercase=False, strip_accents=False, clean_text=True))

    @classmethod
    def fallback(cls) -> "WordPieceTokenizer":
        return cls.from_vocab(fallback_vocabulary())

    @classmethod
    def from_reference(cls, reference: str | None) -> "WordPieceTokenizer":
        if reference is None:
            return cls.fallback()
        path = Path(reference)
        if path.is_dir() and (path / "vocab.txt").is_file():
            return cls.from_vocab(path / "vocab.txt")
        if path.is_file() and path.suffix == ".txt":
            return cls.from_vocab(path)
        name = TEXT_REGISTRY.get(reference)
        if name is None:
            raise EncoderError(f"unknown text weights reference {reference!r}")
        from transformers import BertTokenizerFast

        tok = BertTokenizerFast.from_pretrained(name, cache_dir=os.environ.get(WEIGHTS_DIR_ENV))
        return cls(tok.backend_tokenizer)

    @property
    def vocab_size(self) -> int:
        return self._backend.get_vocab_size()

    def tokens(self, text: str) -> list[str]:
        return self._backend.encode(text, add_special_tokens=False).tokens

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LENGTH) -> TextEncoding:
        if max_len < 3:
            raise ValueError("max_len must be at least 3")
        ids = self._backend.encode(text or "", add_special_tokens=False).ids[: max_len - 2]
        token_ids = (self.cls_id, *ids, self.sep_id)
        return TextEncoding(token_ids, (0,) * len(token_ids))

    def decode(self, token_ids: Sequence[int]) -> str:
        """Inverse of ``encode`` for the sub-word ids (special wrapper tokens stripped)."""
        ids = list(token_ids)
        if ids and ids[0] == self.cls_id:
            ids = ids[1:]
        if ids and ids[-1] == self.sep_id:
            ids = ids[:-1]
        return self._backend.decode(ids, skip_special_tokens=False)


def tokenize(text: str, max_len: int = DEFAULT_MAX_LENGTH, tokenizer: WordPieceTokenizer | None = None) -> TextEncoding:
    tokenizer = tokenizer or default_tokenizer()
    return tokenizer.encode(text, max_len)


@lru_cache(maxsize=1)
def default_tokenizer() -> WordPieceTokenizer:
    return WordPieceTokenizer.fallback()


# ---------------------------------------------------------------------------
# Encoder modules
# ---------------------------------------------------------------------------


class _Encoder(nn.Module):
    spec: EncoderSpec

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    @property
    def modality(self) -> Modality:
        return self.spec.modality

    @property
    def has_parameters(self) -> bool:
        return any(True for _ in self.parameters())

    @property
    def frozen(self) -> bool:
        return not (self.spec.trainable and self.has_parameters)

    def train(self, mode: bool = True):
        # frozen encoders stay in inference mode (no dropout, fixed batch-norm stats)
        return super().train(mode and not self.frozen)


class TextEncoderBase(_Encoder):
    tokenizer: WordPieceTokenizer

    def tokenize(self, text: str, max_len: int = DEFAULT_MAX_LENGTH) -> TextEncoding:
        return self.tokenizer.encode(text, max_len)

    def _check_ids(self, token_ids: torch.Tensor) -> None:
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.tokenizer.vocab_size):
            raise EncoderError(
                f"token id out of vocabulary range [0, {self.tokenizer.vocab_size}): "
                f"min {int(token_ids.min())}, max {int(token_ids.max())}"
            )


class BertTextEncoder(TextEncoderBase):
    """BERT-base; the embedding is the final-layer hidden state at [CLS]."""

    def __init__(self, spec: EncoderSpec, load_pretrained: bool = True):
        super().__init__(spec)
        from transformers import BertConfig, BertModel

        ref = spec.pretrained_weights
        self.tokenizer = WordPieceTokenizer.from_reference(ref)
        if ref is not None and load_pretrained:
            source = TEXT_REGISTRY.get(ref, ref)
            self.bert = BertModel.from_pretrained(
                source, add_pooling_layer=False, cache_dir=os.environ.get(WEIGHTS_DIR_ENV)
            )
        else:
            if ref is not None:
                logger.debug("building BERT architecture for %s without loading weights", ref)
            else:
                logger.warning("no pretrained text weights given; BERT is randomly initialised")
            self.bert = BertModel(BertConfig(vocab_size=self.tokenizer.vocab_size), add_pooling_layer=False)
        if self.bert.config.vocab_size < self.tokenizer.vocab_size:
            raise EncoderError("tokenizer vocabulary larger than the model's embedding table")
        self.bert.requires_grad_(spec.trainable)

    def forward(self, token_ids, segment_ids, attention_mask):
        self._check_ids(token_ids)
        out = self.bert(input_ids=token_ids, token_type_ids=segment_ids, attention_mask=attention_mask)
        return out.last_hidden_state[:, 0]


class ToyTextEncoder(TextEncoderBase):
    """Parameter-free hash fold of token ids.

    Every real token at position p with id t adds 8 signed values into the
    output: for k in 0..7,

        h = ((t + 1) * 0x9E3779B1 + p * 0x85EBCA77 + k * 0xC2B2AE3D) mod 2**32
        h = ((h ^ (h >> 15)) * 0x2C1B3C6D) mod 2**32
        out[h mod dim] += ((h >> 16) / 32768) - 1

    and the sum is scaled by 1 / sqrt(number of tokens).
    """

    HASHES = 8

    def __init__(self, spec: EncoderSpec, tokenizer: WordPieceTokenizer | None = None):
        super().__init__(spec)
        self.tokenizer = tokenizer or default_tokenizer()

    def forward(self, token_ids, segment_ids, attention_mask):
        self._check_ids(token_ids)
        mask = attention_mask.to(torch.int64)
        batch, length = token_ids.shape
        ids = token_ids.to(torch.int64).unsqueeze(-1)
        pos = torch.arange(length, dtype=torch.int64).view(1, -1, 1)
        k = torch.arange(self.HASHES, dtype=torch.int64).view(1, 1, -1)
        mod = 1 << 32
        h = ((ids + 1) * 0x9E3779B1 + pos * 0x85EBCA77 + k * 0xC2B2AE3D) % mod
        h = ((h ^ (h >> 15)) * 0x2C1B3C6D) % mod
        slots = h % self.output_dim
        vals = (h >> 16).to(torch.float64) / 32768.0 - 1.0
        vals = vals * mask.unsqueeze(-1)
        out = torch.zeros(batch, self.output_dim, dtype=torch.float64)
        out.scatter_add_(1, slots.reshape(batch, -1), vals.reshape(batch, -1))
        n = mask.sum(dim=1, keepdim=True).clamp(min=1).to(torch.float64)
        return (out / n.sqrt()).to(torch.get_default_dtype())


class ImageEncoderBase(_Encoder):
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def check_input(self, images: torch.Tensor) -> None:
        if images.dim() != 4 or images.shape[1] != 3:
            raise EncoderError(f"expected a (batch, 3, H, W) RGB tensor, got shape {tuple(images.shape)}")

    def feature_maps(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, images):
        self.check_input(images)
        # global max pooling over the spatial dimensions
        return self.feature_maps(images).amax(dim=(2, 3))


class CnnImageEncoder(ImageEncoderBase):
    """DenseNet-121 or ResNet-50 convolutional trunk without the classifier."""

    def __init__(self, spec: EncoderSpec, load_pretrained: bool = True):
        super().__init__(spec)
        import torchvision

        ref = spec.pretrained_weights if load_pretrained else None
        if ref is None and spec.pretrained_weights is None:
            logger.warning("no pretrained image weights given; %s is randomly initialised", spec.kind.value)
        weights = None
        if ref in IMAGE_REGISTRY:
            if os.environ.get(WEIGHTS_DIR_ENV):
                torch.hub.set_dir(os.environ[WEIGHTS_DIR_ENV])
            weights = "DEFAULT"
        if spec.kind is EncoderKind.DENSE_CNN:
            net = torchvision.models.densenet121(weights=weights)
        elif spec.kind is EncoderKind.RESIDUAL_CNN:
            net = torchvision.models.resnet50(weights=weights)
        else:
            raise EncoderError(f"{spec.kind.value} is not a CNN kind")
        if ref is not None and ref not in IMAGE_REGISTRY:
            path = Path(ref)
            if not path.is_file():
                raise EncoderError(f"image weights file not found: {ref}")
            net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        if spec.kind is EncoderKind.DENSE_CNN:
            self.trunk = nn.Sequential(net.features, nn.ReLU())
        else:
            self.trunk = nn.Sequential(
                net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3, net.layer4
            )
        self.trunk.requires_grad_(spec.trainable)

    def feature_maps(self, images):
        return self.trunk(images)


class ToyImageEncoder(ImageEncoderBase):
    """1x1 projection of the RGB input by a seeded Gaussian matrix, then global max pooling.

    Feature map d is ``sum_c W[d, c] * image[c]`` so pooled entry d is its
    spatial maximum.
    """

    mean = (0.5, 0.5, 0.5)
    std = (0.5, 0.5, 0.5)

    def __init__(self, spec: EncoderSpec):
        super().__init__(spec)
        gen = torch.Generator().manual_seed(spec.seed)
        proj = torch.randn(spec.output_dim, 3, generator=gen, dtype=torch.float64) / np.sqrt(3.0)
        self.register_buffer("projection", proj.to(torch.get_default_dtype()))

    CHUNK = 8

    def feature_maps(self, images):
        return torch.einsum("dc,bchw->bdhw", self.projection.to(images.dtype), images)

    def forward(self, images):
        self.check_input(images)
        # chunked so the (batch, dim, H, W) maps never exist all at once
        return torch.cat(
            [self.feature_maps(part).amax(dim=(2, 3)) for part in images.split(self.CHUNK)]
        )


def build_encoder(spec: EncoderSpec, load_pretrained: bool = True) -> _Encoder:
    kind = spec.kind
    if kind is EncoderKind.TRANSFORMER_TEXT:
        return BertTextEncoder(spec, load_pretrained)
    if kind is EncoderKind.TOY_TEXT:
        return ToyTextEncoder(spec)
    if kind in (EncoderKind.DENSE_CNN, EncoderKind.RESIDUAL_CNN):
        return CnnImageEncoder(spec, load_pretrained)
    return ToyImageEncoder(spec)


@lru_cache(maxsize=8)
def _cached_encoder(spec: EncoderSpec) -> _Encoder:
    return build_encoder(spec).eval()


def _resolve(encoder: EncoderSpec | _Encoder) -> _Encoder:
    return _cached_encoder(encoder) if isinstance(encoder, EncoderSpec) else encoder


# ---------------------------------------------------------------------------
# Single-item encode helpers
# ---------------------------------------------------------------------------


def pad_encodings(encodings: Sequence[TextEncoding], pad_id: int = 0):
    """Stack encodings into (ids, segments, mask) tensors, right-padded."""
    length = max(len(e) for e in encodings)
    ids = torch.full((len(encodings), length), pad_id, dtype=torch.long)
    seg = torch.zeros((len(encodings), length), dtype=torch.long)
    mask = torch.zeros((len(encodings), length), dtype=torch.long)
    for i, e in enumerate(encodings):
        n = len(e)
        ids[i, :n] = torch.tensor(e.token_ids, dtype=torch.long)
        seg[i, :n] = torch.tensor(e.segment_ids, dtype=torch.long)
        mask[i, :n] = 1
    return ids, seg, mask


@torch.no_grad()
def encode_text(enc: TextEncoding, encoder: EncoderSpec | TextEncoderBase) -> EmbeddingVector:
    encoder = _resolve(encoder)
    if encoder.modality is not Modality.TEXT:
        raise EncoderError(f"{encoder.spec.kind.value} is not a text encoder")
    ids, seg, mask = pad_encodings([enc], encoder.tokenizer.pad_id)
    return EmbeddingVector(Modality.TEXT, encoder(ids, seg, mask)[0].double().numpy())


@torch.no_grad()
def encode_image(image: torch.Tensor, encoder: EncoderSpec | ImageEncoderBase) -> EmbeddingVector:
    encoder = _resolve(encoder)
    if encoder.modality is not Modality.IMAGE:
        raise EncoderError(f"{encoder.spec.kind.value} is not an image encoder")
    image = torch.as_tensor(image)
    if image.dim() != 3 or image.shape[0] != 3:
        raise EncoderError(f"expected a (3, H, W) RGB tensor, got shape {tuple(image.shape)}")
    return EmbeddingVector(Modality.IMAGE, encoder(image.unsqueeze(0))[0].double().numpy())


# ---------------------------------------------------------------------------
# Image decoding
# ---------------------------------------------------------------------------


def preprocess_image(
    path: str | Path,
    size: int = DEFAULT_IMAGE_SIZE,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> torch.Tensor:
    """Decode an image file into a normalised (3, size, size) float tensor.

    Truncated files are decoded with the missing tail filled in; files that
    are not images at all raise ImageDecodeError.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageDecodeError(f"image not found: {path}")
    previous = ImageFile.LOAD_TRUNCATED_IMAGES
    ImageFile.LOAD_TRUNCATED_IMAGES = True
    try:
        with Image.open(path) as img:
            img.load()
            rgb = img.convert("RGB").resize((size, size), Image.Resampling.BILINEAR)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    finally:
        ImageFile.LOAD_TRUNCATED_IMAGES = previous
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
    mean_t = torch.tensor(mean, dtype=torch.float32).view(3, 1, 1)
    std_t = torch.tensor(std, dtype=torch.float32).view(3, 1, 1)
    return ((tensor - mean_t) / std_t).to(torch.get_default_dtype())


def preprocess_for(encoder: ImageEncoderBase, path: str | Path) -> torch.Tensor:
    return preprocess_image(path, encoder.spec.image_size, encoder.mean, encoder.std)
