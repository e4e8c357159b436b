import math

import pytest
import torch

from memotion.dataset import ClassWeights, Task, balanced_weights
from memotion.encoders import toy_image_spec, toy_text_spec
from memotion.fusion_model import ModelSpec, build_model
from memotion.trainer import (
    PRESETS,
    TrainingConfig,
    TrainingError,
    evaluate_records,
    get_preset,
    make_batches,
    per_example_loss,
    targets_for,
    train,
    weighted_loss,
)

# -- presets ------------------------------------------------------------------------


def test_submitted_preset():
    p = get_preset("submitted")
    c = p.config
    assert (c.learning_rate, c.batch_size, c.dropout_rate, c.l2_coefficient) == (1e-5, 16, 0.2, 0.02)
    assert c.class_weight_mode == "balanced"
    assert p.variant == "bert_densenet"


@pytest.mark.parametrize(
    "name, lr, dropout, l2, text, image",
    [
        ("comparative_bert", 1e-6, 0.0, 0.01, True, False),
        ("comparative_densenet", 1e-6, 0.0, 0.01, False, True),
        ("comparative_resnet", 1e-6, 0.0, 0.01, False, True),
        ("comparative_bert_densenet", 1e-6, 0.3, 0.04, True, True),
        ("comparative_bert_resnet", 1e-6, 0.3, 0.04, True, True),
    ],
)
def test_comparative_presets(name, lr, dropout, l2, text, image):
    p = PRESETS[name]
    assert (p.config.learning_rate, p.config.dropout_rate, p.config.l2_coefficient) == (lr, dropout, l2)
    assert p.config.batch_size == 16
    t, i = p.encoders()
    assert (t is not None, i is not None) == (text, image)


def test_resnet_variant_dims():
    spec = PRESETS["comparative_bert_resnet"].model_spec(Task.A, toy=True)
    assert spec.fused_dim == 2816
    assert PRESETS["comparative_bert_densenet"].model_spec(Task.A).fused_dim == 1792


def test_unknown_preset_lists_valid_ones():
    with pytest.raises(KeyError, match="comparative_densenet"):
        get_preset("nope")


def test_adam_defaults_recorded():
    c = TrainingConfig()
    assert c.adam_betas == (0.9, 0.999) and c.adam_eps == 1e-8
    assert (c.max_epochs, c.early_stop_patience) == (20, 3)


# -- batching --------------------------------------------------------------------------


def test_batch_count_for_train_split():
    batches = make_batches(list(range(5192)), 16, seed=0)
    assert len(batches) == 325
    assert [len(b) for b in batches[:-1]] == [16] * 324 and len(batches[-1]) == 8


def test_exact_fit_and_determinism():
    assert len(make_batches(list(range(16)), 16, 1)) == 1
    assert make_batches(list(range(50)), 7, 3) == make_batches(list(range(50)), 7, 3)
    assert make_batches(list(range(50)), 7, 3) != make_batches(list(range(50)), 7, 4)


def test_each_record_once_per_epoch():
    batches = make_batches(list(range(103)), 10, 9)
    assert sorted(x for b in batches for x in b) == list(range(103))


# -- loss ------------------------------------------------------------------------------


def test_perfect_prediction_has_zero_loss():
    logits = torch.tensor([[-1e4, 1e4, -1e4]])
    assert per_example_loss(logits, torch.tensor([1]), Task.A).item() <= 1e-6
    assert per_example_loss(torch.tensor([[1e4]]), torch.tensor([1]), Task.B_FUNNY).item() <= 1e-6


def test_uniform_prediction_costs_ln3():
    loss = per_example_loss(torch.zeros(1, 3), torch.tensor([2]), Task.A, ClassWeights(Task.A, (1.0, 1.0, 1.0)))
    assert loss.item() == pytest.approx(math.log(3), abs=1e-6)
    assert math.log(3) == pytest.approx(1.0986, abs=1e-4)


def test_class_weight_scales_linearly():
    logits = torch.tensor([[0.3, -1.2, 2.0], [1.0, 0.0, 0.0]])
    t = torch.tensor([0, 2])
    base = per_example_loss(logits, t, Task.A, ClassWeights(Task.A, (1.0, 1.0, 1.0)))
    doubled = per_example_loss(logits, t, Task.A, ClassWeights(Task.A, (2.0, 2.0, 2.0)))
    torch.testing.assert_close(doubled, 2 * base)


def test_sigmoid_loss_uses_target_class_weight():
    w = ClassWeights(Task.B_FUNNY, (3.0, 0.5))
    z = torch.tensor([[0.7], [0.7]])
    loss = per_example_loss(z, torch.tensor([0, 1]), Task.B_FUNNY, w)
    p = torch.sigmoid(torch.tensor(0.7))
    torch.testing.assert_close(loss, torch.stack([-3.0 * torch.log(1 - p), -0.5 * torch.log(p)]))


def test_zero_probability_is_clamped():
    loss = per_example_loss(torch.tensor([[-1e4, 1e4, 0.0]]), torch.tensor([0]), Task.A)
    assert loss.item() == pytest.approx(-math.log(1e-7))


def test_mismatched_weights_rejected():
    with pytest.raises(ValueError):
        weighted_loss(torch.zeros(1, 3), torch.tensor([0]), Task.A, ClassWeights(Task.C_FUNNY, (1.0,) * 4))


def test_l2_penalty_linearity_identity():
    torch.manual_seed(0)
    model = build_model(ModelSpec(Task.A, toy_text_spec(8), hidden_dim=4, l2_coefficient=0.5))
    fused = torch.randn(5, 8)
    t = torch.tensor([0, 1, 2, 0, 1])
    w = ClassWeights(Task.A, (0.7, 1.3, 2.1))
    w2 = ClassWeights(Task.A, tuple(2 * x for x in w.weights))
    l2 = model.l2_penalty()
    assert l2.item() == pytest.approx(0.5 * model.dense.weight.pow(2).sum().item())
    logits = model.head(fused)
    lhs = weighted_loss(logits, t, Task.A, w2) + l2 - l2
    rhs = 2 * (weighted_loss(logits, t, Task.A, w) + l2 - l2)
    assert lhs.item() == pytest.approx(rhs.item(), rel=1e-6)


def test_balanced_weights_equalise_class_gradients():
    # uniform predictions: per-class sum of d(loss)/d(logits) has the same norm for every class
    counts = (5, 20, 75)
    targets = torch.tensor([c for c, n in enumerate(counts) for _ in range(n)])
    logits = torch.zeros(len(targets), 3, requires_grad=True)
    loss = per_example_loss(logits, targets, Task.A, balanced_weights(counts, Task.A)).sum()
    loss.backward()
    norms = [logits.grad[targets == c].sum(0).norm().item() for c in range(3)]
    assert norms == pytest.approx([norms[0]] * 3, rel=1e-6)


# -- training ------------------------------------------------------------------------------


def small_config(**kw):
    base = dict(learning_rate=1e-3, batch_size=8, dropout_rate=0.0, l2_coefficient=0.0, max_epochs=3,
                early_stop_patience=5, seed=0, hidden_dim=32)
    base.update(kw)
    return TrainingConfig(**base)


def toy_spec(task=Task.A, cfg=None, **kw):
    cfg = cfg or small_config()
    return ModelSpec(task, toy_text_spec(64), toy_image_spec(32), hidden_dim=cfg.hidden_dim,
                     dropout_rate=cfg.dropout_rate, l2_coefficient=cfg.l2_coefficient, **kw)


def test_zero_learning_rate_leaves_weights(toy_splits):
    cfg = small_config(learning_rate=0.0, max_epochs=1)
    torch.manual_seed(123)
    model = build_model(toy_spec(cfg=cfg))
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(toy_spec(cfg=cfg), cfg, toy_splits["train"], toy_splits["dev"], model=model)
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_same_seed_same_history(toy_splits):
    cfg = small_config(dropout_rate=0.3)
    runs = [train(toy_spec(cfg=cfg), cfg, toy_splits["train"], toy_splits["dev"]) for _ in range(2)]
    assert [h.to_dict() for h in runs[0].history] == [h.to_dict() for h in runs[1].history]


def test_history_and_checkpoint_written(tmp_path, toy_splits):
    cfg = small_config(max_epochs=2)
    res = train(toy_spec(Task.B_FUNNY, cfg), cfg, toy_splits["train"], toy_splits["dev"], out_dir=tmp_path)
    lines = (tmp_path / "history.jsonl").read_text().splitlines()
    assert len(lines) == len(res.history) == 2
    assert (tmp_path / "checkpoint.pt").is_file()
    assert res.steps == 2 * math.ceil(len(toy_splits["train"]) / 8)


def test_early_stopping_keeps_best_dev(toy_splits):
    cfg = small_config(max_epochs=12, early_stop_patience=2, learning_rate=3e-3)
    res = train(toy_spec(Task.C_SARCASTIC, cfg), cfg, toy_splits["train"], toy_splits["dev"])
    best = max(h.dev_macro_f1 for h in res.history)
    assert res.best_dev_f1 == best
    score, _ = evaluate_records(res.model, toy_splits["dev"])
    assert score == pytest.approx(best)
    # stops once patience is exhausted
    after_best = len(res.history) - res.best_epoch
    assert after_best <= cfg.early_stop_patience


def test_non_finite_loss_aborts(toy_splits):
    cfg = small_config(max_epochs=1)
    model = build_model(toy_spec(cfg=cfg))
    with torch.no_grad():
        model.dense.weight.fill_(float("nan"))
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train(model.spec, cfg, toy_splits["train"], toy_splits["dev"], model=model)


def test_cached_and_direct_paths_agree(toy_splits):
    from memotion.trainer import _Inputs

    model = build_model(toy_spec()).eval()
    recs = toy_splits["dev"][:6]
    direct = _Inputs(model, precompute=False).logits(recs)
    cached = _Inputs(model, precompute=True).logits(recs)
    torch.testing.assert_close(direct, cached)


def test_overfits_small_balanced_set(toy_splits):
    recs = toy_splits["train"][:30] + toy_splits["dev"][:2]
    cfg = small_config(max_epochs=100, max_steps=200, batch_size=16, early_stop_patience=100, hidden_dim=256)
    res = train(toy_spec(Task.A, cfg), cfg, recs, recs)
    acc = (torch.tensor(evaluate_records(res.model, recs)[1]) == targets_for(recs, Task.A)).float().mean()
    assert res.steps <= 200
    assert acc >= 0.95
