import warnings

import numpy as np
import pytest

from glitter.data import AugmentPool, Dataset, Example
from glitter.errors import ConfigError, ValidationError
from glitter.losses import KDConfig, ct_task_loss, kd_task_loss, single_task_loss
from glitter.model import backward, forward, freeze, sgd_step, zero_gradients
from glitter.selection import EvalMode, score_pool, select_topk
from glitter.synth import make_noisy_aug, make_separable, make_text_toy
from glitter.training import (TrainConfig, ModelSpec, ScheduleSpec, build_model, cache_teacher_logits, evaluate,
                              macro_f1, train, train_self_kd, write_history_csv)


def small_noisy(n=40, K=4, seed=0):
    out = make_noisy_aug(seed=seed, n_train=n, n_dev=20, dim=4, K=K)
    return out.train, out.dev, out.pool


def cfg_for(regime, **kw):
    base = dict(regime=regime, k1=2, epochs=2, batch_size=8, model=ModelSpec("mlp", (6,)),
                schedule=ScheduleSpec(0.2, 0.0), seed=3)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# one-step reference built from the per-example scalar functions
# ---------------------------------------------------------------------------

def reference_step(m, ds, pool, cfg, teacher=None):
    """Full-batch single step: score, select, loss, backward, average, SGD."""
    mode = cfg.resolved_eval_mode()
    total = zero_gradients(m)
    losses = []
    for ex in ds.examples:
        entries = list(pool[ex.id])
        if cfg.regime in ("vanilla_da", "ct_vanilla"):
            chosen = list(range(len(entries)))
        else:
            scores = score_pool(m, teacher, ex, entries, mode)
            chosen = list(select_topk(scores, cfg.k1).chosen)
        sel_inputs = [entries[k] for k in chosen]
        p0 = forward(m, ex.input)
        sel = [forward(m, x) for x in sel_inputs]
        if cfg.regime == "kd":
            t0 = forward(teacher.params, ex.input).logits
            ts = [forward(teacher.params, x).logits for x in sel_inputs]
            lv = kd_task_loss(ex.label, p0.logits, t0, [p.logits for p in sel], ts, cfg.kd)
        elif cfg.regime.startswith("ct_"):
            lv = ct_task_loss(ex.label, p0, p0.probabilities, sel)  # first visit: current prediction
        else:
            lv = single_task_loss(ex.label, p0, sel)
        losses.append(lv.value)
        for x, g in zip([ex.input] + sel_inputs, lv.grad_wrt_logits):
            total = total + backward(m, x, g)
    return sgd_step(m, total.scale(1.0 / len(ds)), cfg.schedule.base_lr), float(np.mean(losses))


@pytest.mark.parametrize("regime,eval_tag", [("glitter", "pred_ce"), ("glitter", "gt_ce"), ("glitter", "focal"),
                                             ("vanilla_da", None), ("ct_glitter", None), ("ct_vanilla", None),
                                             ("kd", "kd_kl"), ("kd", "gt_ce")])
def test_first_step_matches_reference(regime, eval_tag):
    ds, _, pool = small_noisy(n=12, K=5)
    mode = EvalMode(eval_tag) if eval_tag else None
    cfg = cfg_for(regime, epochs=1, batch_size=len(ds), eval_mode=mode, kd=KDConfig(0.3, 2.0))
    teacher = freeze(build_model(ds, ModelSpec("mlp", (7,)), 11)) if regime == "kd" else None
    m0 = build_model(ds, cfg.model, cfg.seed)
    want_m, want_loss = reference_step(m0, ds, pool, cfg, teacher)
    res = train(ds, pool, teacher, cfg)
    assert res.step_losses[0] == pytest.approx(want_loss, abs=1e-12)
    for a, b in zip(res.model.arrays(), want_m.arrays()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_vanilla_has_no_aug_term():
    ds, _, pool = small_noisy(n=12)
    cfg = cfg_for("vanilla", epochs=1, batch_size=12)
    m0 = build_model(ds, cfg.model, cfg.seed)
    total = zero_gradients(m0)
    for ex in ds.examples:
        lv = single_task_loss(ex.label, forward(m0, ex.input), [])
        total = total + backward(m0, ex.input, lv.grad_wrt_logits[0])
    want = sgd_step(m0, total.scale(1 / 12), 0.2)
    got = train(ds, None, None, cfg).model
    assert all(np.allclose(a, b, atol=1e-12, rtol=0) for a, b in zip(got.arrays(), want.arrays()))


# ---------------------------------------------------------------------------
# identities and accounting
# ---------------------------------------------------------------------------

def test_glitter_full_k_equals_vanilla_da():
    ds, _, pool = small_noisy(n=30, K=4)
    a = train(ds, pool, None, cfg_for("glitter", k1=4, eval_mode=EvalMode("gt_ce")))
    b = train(ds, pool, None, cfg_for("vanilla_da"))
    assert a.step_losses == b.step_losses
    assert all(np.array_equal(x, y) for x, y in zip(a.model.arrays(), b.model.arrays()))


def test_kd_alpha_one_equals_vanilla():
    ds, _, pool = small_noisy(n=30, K=4)
    teacher = freeze(build_model(ds, ModelSpec("mlp", (6,)), 9))
    a = train(ds, pool, teacher, cfg_for("kd", kd=KDConfig(1.0, 12.0)))
    b = train(ds, None, None, cfg_for("vanilla"))
    assert np.allclose(a.step_losses, b.step_losses, atol=1e-12, rtol=0)
    assert all(np.allclose(x, y, atol=1e-12, rtol=0) for x, y in zip(a.model.arrays(), b.model.arrays()))


@pytest.mark.parametrize("regime,k1,per_ex", [("glitter", 2, 3), ("glitter", 1, 2), ("vanilla_da", 2, 5),
                                              ("vanilla", 2, 1), ("glitter_rnd", 3, 4), ("ct_glitter", 2, 3)])
def test_grad_pass_counts(regime, k1, per_ex):
    ds, _, pool = small_noisy(n=30, K=4)
    res = train(ds, pool if regime != "vanilla" else None, None, cfg_for(regime, k1=k1))
    for h in res.history:
        assert h.grad_passes == 30 * per_ex
        assert h.score_passes == (30 * 4 if regime in ("glitter", "ct_glitter") else 0)


def test_ragged_pool_counts():
    ds, _, pool = small_noisy(n=6, K=4)
    entries = dict(pool.entries)
    entries[ds.ids[0]] = entries[ds.ids[0]][:1]
    entries[ds.ids[1]] = ()
    rag = AugmentPool(entries, 4, ragged=True)
    res = train(ds, rag, None, cfg_for("glitter", k1=2, epochs=1))
    assert res.history[0].grad_passes == 6 + 1 + 0 + 4 * 2
    assert res.history[0].score_passes == 1 + 4 * 4


def test_ct_cache_holds_latest_prediction():
    ds, _, pool = small_noisy(n=16, K=4)
    cfg = cfg_for("ct_glitter", epochs=1, batch_size=16)
    res = train(ds, pool, None, cfg)
    # one full-batch step: the cache holds the pre-update prediction
    m0 = build_model(ds, cfg.model, cfg.seed)
    assert len(res.prediction_cache) == 16
    for ex in ds.examples:
        np.testing.assert_allclose(res.prediction_cache[ex.id], forward(m0, ex.input).probabilities, atol=1e-15)
    assert res.prediction_cache.probs.sum(axis=1) == pytest.approx(np.ones(16))


def test_kd_cache_matches_live():
    ds, _, pool = small_noisy(n=30, K=4)
    t = freeze(build_model(ds, ModelSpec("mlp", (6,)), 5))
    cfg = cfg_for("kd", kd=KDConfig(0.5, 4.0))
    live = train(ds, pool, t, cfg)
    cached = train(ds, pool, t.with_cache(cache_teacher_logits(t, ds, pool)), cfg)
    assert np.allclose(live.step_losses, cached.step_losses, atol=1e-12, rtol=0)


def test_cache_teacher_logits_keys():
    ds, _, pool = small_noisy(n=5, K=3)
    t = freeze(build_model(ds, ModelSpec("mlp", (4,)), 1))
    cache = cache_teacher_logits(t, ds, pool)
    assert len(cache) == 5 * 4
    np.testing.assert_allclose(cache[f"{ds.ids[2]}:1"], forward(t.params, pool[ds.ids[2]][1]).logits, atol=1e-14)


# ---------------------------------------------------------------------------
# behaviour
# ---------------------------------------------------------------------------

def test_separable_reaches_perfect_accuracy():
    out = make_separable(seed=0)
    cfg = TrainConfig(regime="glitter", k1=2, epochs=15, batch_size=16, model=ModelSpec("mlp", (16,)),
                      schedule=ScheduleSpec(0.2, 0.06), eval_mode=EvalMode("gt_ce"))
    res = train(out.train, out.pool, None, cfg, out.dev)
    assert evaluate(res.model, out.train).accuracy == 1.0
    assert res.history[-1].dev_accuracy == 1.0


def test_text_toy_boe_learns():
    out = make_text_toy(seed=1, n_train=120, n_dev=60)
    cfg = TrainConfig(regime="glitter", k1=2, epochs=12, batch_size=16, model=ModelSpec("boe", (16,), 16),
                      schedule=ScheduleSpec(0.5, 0.06))
    res = train(out.train, out.pool, None, cfg, out.dev)
    assert res.history[-1].dev_accuracy > 0.85


def test_loss_decreases():
    ds, _, pool = small_noisy(n=60, K=4)
    res = train(ds, pool, None, cfg_for("glitter", epochs=8))
    assert res.history[-1].train_loss < res.history[0].train_loss


def test_determinism_and_seed_sensitivity():
    ds, dev, pool = small_noisy(n=30, K=4)
    a = train(ds, pool, None, cfg_for("glitter_rnd"), dev)
    b = train(ds, pool, None, cfg_for("glitter_rnd"), dev)
    c = train(ds, pool, None, cfg_for("glitter_rnd", seed=4), dev)
    assert a.step_losses == b.step_losses
    assert all(np.array_equal(x, y) for x, y in zip(a.model.arrays(), b.model.arrays()))
    assert a.step_losses != c.step_losses


def test_early_stopping():
    ds, dev, pool = small_noisy(n=30, K=4)
    res = train(ds, pool, None, cfg_for("glitter", epochs=30, patience=1, schedule=ScheduleSpec(0.0, 0.0)), dev)
    assert len(res.history) == 2  # lr 0: dev accuracy never improves after epoch 1


def test_self_kd_two_phases():
    ds, dev, pool = small_noisy(n=30, K=4)
    cfg = cfg_for("self_kd", k1=1)
    a = train_self_kd(ds, pool, cfg, dev)
    b = train_self_kd(ds, pool, cfg, dev)
    assert a.student.step_losses == b.student.step_losses
    assert len(a.teacher_run.history) == cfg.epochs
    assert all(h.grad_passes == 30 for h in a.teacher_run.history)
    assert all(h.grad_passes == 30 * 2 for h in a.student.history)
    np.testing.assert_array_equal(a.teacher.params.weights[0], a.teacher_run.model.weights[0])


def test_config_errors():
    ds, _, pool = small_noisy(n=6, K=4)
    with pytest.raises(ConfigError):
        train(ds, None, None, cfg_for("glitter"))
    with pytest.raises(ConfigError):
        train(ds, pool, None, cfg_for("glitter", k1=5))
    with pytest.raises(ConfigError):
        train(ds, pool, None, cfg_for("kd"))
    with pytest.raises(ConfigError):
        TrainConfig(regime="mixup")
    with pytest.raises(ConfigError):
        train(ds, pool, None, cfg_for("glitter", model=ModelSpec("boe")))


def test_default_eval_modes():
    assert TrainConfig(regime="glitter").resolved_eval_mode().tag == "pred_ce"
    assert TrainConfig(regime="kd").resolved_eval_mode().tag == "kd_kl"
    assert TrainConfig(regime="glitter_rnd").resolved_eval_mode().tag == "random"


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_macro_f1_hand_value():
    # confusion [[2,1,0],[0,3,0],[1,0,3]]: per-class F1 = 4/6, 6/7, 6/7 -> mean 50/63
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    preds = np.array([0, 0, 1, 1, 1, 1, 0, 2, 2, 2])
    assert macro_f1(labels, preds, 3) == pytest.approx(50 / 63, abs=1e-15)


def test_macro_f1_absent_class_warns():
    with pytest.warns(RuntimeWarning):
        assert macro_f1(np.array([0, 1]), np.array([0, 1]), 3) == pytest.approx(2 / 3)


def test_evaluate_rejects_more_classes():
    ds = Dataset((Example("a", (0.0, 1.0), 3),), 4)
    m = build_model(Dataset((Example("a", (0.0, 1.0), 1),), 2), ModelSpec("mlp", (3,)), 0)
    with pytest.raises(ValidationError):
        evaluate(m, ds)


def test_history_csv(tmp_path):
    ds, dev, pool = small_noisy(n=12, K=4)
    res = train(ds, pool, None, cfg_for("glitter"), dev)
    write_history_csv(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["epoch", "step", "train_loss"]
    assert len(lines) == 1 + len(res.history)


def test_no_dev_records_nan():
    ds, _, pool = small_noisy(n=12, K=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = train(ds, pool, None, cfg_for("glitter"))
    assert np.isnan(res.history[0].dev_accuracy)
