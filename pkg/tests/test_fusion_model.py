import numpy as np
import pytest
import torch

from memotion.dataset import ALL_TASKS, ClassWeights, Task
from memotion.encoders import EmbeddingVector, Modality, toy_image_spec, toy_text_spec
from memotion.fusion_model import (
    CheckpointError,
    ModalityError,
    ModelSpec,
    SpecError,
    build_model,
    decide,
    dense_parameter_count,
    fuse,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
)
from memotion.trainer import batch_loss, targets_for

from conftest import make_record


def emb(modality, dim, value=1.0):
    return EmbeddingVector(modality, np.full(dim, value))


# -- fuse -----------------------------------------------------------------------------


def test_fuse_text_and_dense_image():
    fused = fuse(emb(Modality.TEXT, 768, 1.0), emb(Modality.IMAGE, 1024, 2.0))
    assert fused.dim == 1792 and fused.modality is Modality.FUSED
    assert fused.values[767] == 1.0 and fused.values[768] == 2.0


def test_fuse_text_only_passes_through():
    fused = fuse(emb(Modality.TEXT, 768), None)
    assert fused.dim == 768 and fused.modality is Modality.FUSED


def test_fuse_with_residual_image():
    assert fuse(emb(Modality.TEXT, 768), emb(Modality.IMAGE, 2048)).dim == 2816


def test_fuse_errors():
    with pytest.raises(ValueError):
        fuse(None, None)
    with pytest.raises(ValueError):
        fuse(emb(Modality.IMAGE, 4), None)


# -- build_model ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "task, out_dim, activation",
    [(Task.A, 3, "softmax"), (Task.B_FUNNY, 1, "sigmoid"), (Task.C_OFFENSIVE, 4, "softmax")],
)
def test_output_layer_per_task(task, out_dim, activation):
    spec = ModelSpec(task, toy_text_spec(), toy_image_spec())
    model = build_model(spec)
    assert model.output.out_features == out_dim
    assert spec.activation == activation
    assert model.dense.in_features == 1792


@pytest.mark.parametrize("task", ALL_TASKS)
def test_dense_parameter_count(task):
    spec = ModelSpec(task, toy_text_spec(24), toy_image_spec(40), hidden_dim=7)
    assert dense_parameter_count(build_model(spec)) == (64 + 1) * 7


def test_single_dense_layer_between_fusion_and_output():
    model = build_model(ModelSpec(Task.A, toy_text_spec(8)))
    linear = [m for m in model.modules() if isinstance(m, torch.nn.Linear)]
    assert [l.in_features for l in linear] == [8, model.spec.hidden_dim]


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(), "at least one encoder"),
        (dict(text_encoder=toy_image_spec(4)), "non-text"),
        (dict(text_encoder=toy_text_spec(4), dropout_rate=1.0), "dropout"),
        (dict(text_encoder=toy_text_spec(4), l2_coefficient=-1), "l2"),
        (dict(text_encoder=toy_text_spec(4), hidden_dim=0), "hidden_dim"),
    ],
)
def test_invalid_specs(kwargs, message):
    with pytest.raises(SpecError, match=message):
        build_model(ModelSpec(Task.A, **kwargs))


# -- prediction ---------------------------------------------------------------------------


def test_decide_rules():
    assert decide([0.5], Task.B_FUNNY, 0.5) == 1
    assert decide([0.4999], Task.B_FUNNY, 0.5) == 0
    assert decide([0.2, 0.6, 0.2], Task.A) == 1
    assert decide([0.4, 0.4, 0.2], Task.A) == 0


def test_softmax_sums_to_one_on_random_inputs():
    torch.manual_seed(0)
    model = build_model(ModelSpec(Task.C_FUNNY, toy_text_spec(16), hidden_dim=8))
    for _ in range(1000):
        probs = model.probabilities(model.head(torch.randn(1, 16) * 10))
        assert abs(probs.sum().item() - 1.0) <= 1e-6


def test_sigmoid_output_in_unit_interval():
    model = build_model(ModelSpec(Task.B_OFFENSIVE, toy_text_spec(16), hidden_dim=8))
    p = model.probabilities(model.head(torch.randn(100, 16) * 50))
    assert ((p >= 0) & (p <= 1)).all()


def test_predict_deterministic_and_dropout_off(toy_splits):
    torch.manual_seed(0)
    model = build_model(ModelSpec(Task.A, toy_text_spec(), toy_image_spec(), dropout_rate=0.5))
    model.train()
    recs = toy_splits["dev"][:5]
    a = predict_batch(model, recs)
    b = predict_batch(model, recs)
    assert a == b
    assert model.training  # restored
    for p in a:
        assert sum(p.probabilities) == pytest.approx(1.0, abs=1e-6)
        assert p.class_index == int(np.argmax(p.probabilities))


def test_missing_modality_is_an_error(toy_splits):
    model = build_model(ModelSpec(Task.A, toy_text_spec(), toy_image_spec()))
    with pytest.raises(ModalityError):
        predict(model, make_record(image_path=""))
    with pytest.raises(ModalityError):
        predict(model, make_record(text=None, image_path=toy_splits["dev"][0].image_path))


def test_checkpoint_round_trip(tmp_path, toy_splits):
    model = build_model(ModelSpec(Task.B_FUNNY, toy_text_spec(), toy_image_spec(2048, seed=2), hidden_dim=16))
    save_checkpoint(model, tmp_path / "c.pt", extra={"note": 1})
    loaded, extra = load_checkpoint(tmp_path / "c.pt")
    assert loaded.spec == model.spec and extra == {"note": 1}
    recs = toy_splits["test"][:4]
    assert predict_batch(loaded, recs) == predict_batch(model, recs)


def test_checkpoint_rejects_foreign_files(tmp_path):
    torch.save({"x": 1}, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")


# -- gradient check ----------------------------------------------------------------------


def _gradient_check(task, text_dim, image_dim, hidden, records, eps=1e-6):
    torch.manual_seed(1)
    spec = ModelSpec(task, toy_text_spec(text_dim), toy_image_spec(image_dim), hidden_dim=hidden, l2_coefficient=0.02)
    model = build_model(spec).double().eval()
    targets = targets_for(records, task)
    weights = ClassWeights(task, tuple(0.5 + i for i in range(task.num_classes)))
    fused = model.embed(model.prepare(records)).detach()

    def loss_value():
        return batch_loss(model, model.head(fused), targets, weights)

    loss = loss_value()
    (analytic,) = torch.autograd.grad(loss, model.dense.weight)
    w = model.dense.weight.data
    numeric = torch.zeros_like(w)
    with torch.no_grad():
        for idx in np.ndindex(*w.shape):
            old = w[idx].item()
            w[idx] = old + eps
            plus = loss_value().item()
            w[idx] = old - eps
            minus = loss_value().item()
            w[idx] = old
            numeric[idx] = (plus - minus) / (2 * eps)
    return analytic, numeric


@pytest.mark.parametrize("task", [Task.A, Task.B_SARCASTIC, Task.C_FUNNY])
def test_dense_gradient_matches_finite_differences(toy_splits, task):
    records = toy_splits["train"][:4]
    analytic, numeric = _gradient_check(task, 12, 10, 6, records)
    rel = (analytic - numeric).norm() / max(analytic.norm(), numeric.norm())
    assert rel <= 1e-3
    big = analytic.abs() > 1e-4
    elementwise = ((analytic - numeric).abs() / analytic.abs())[big]
    assert elementwise.max() <= 1e-3
