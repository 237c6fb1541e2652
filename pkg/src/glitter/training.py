"""Training regimes, evaluation, and teacher-logit caching.

Regimes
-------
vanilla      CE on originals only.
vanilla_da   CE on originals + mean CE over the whole pool.
glitter      CE on originals + mean CE over the top-k1 pool entries by eval loss.
glitter_rnd  as glitter, but the k1 entries are drawn uniformly at random.
ct_vanilla   consistency loss over the whole pool.
ct_glitter   consistency loss over the top-k1 entries.
kd           distillation from a frozen teacher over original + top-k1 entries.
self_kd      train vanilla, freeze as teacher, distil into a fresh copy.

One SGD step per mini-batch; per-example losses are summed with their
exact weights and the gradient is averaged over the batch.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import AugmentPool, Dataset, batch_indices
from .errors import ConfigError, TrainingAborted, ValidationError
from .losses import KDConfig, kl_rows, onehot, xent_rows
from .model import (Encoded, ModelParams, Schedule, Teacher, backward_batch, build_vocab, clone_fresh,
                    encode, encode_ids, forward_batch, freeze, init_model, logits_batch, lr_at, sgd_step,
                    token_ids)
from .selection import EvalMode, random_stream, score_rows, select_topk_rows

log = logging.getLogger(__name__)

REGIMES = ("vanilla", "vanilla_da", "glitter", "ct_vanilla", "ct_glitter", "self_kd", "kd", "glitter_rnd")
_FULL_POOL = ("vanilla_da", "ct_vanilla")
_SCORED = ("glitter", "ct_glitter", "kd")


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "mlp"
    hidden: tuple = (64,)
    embed_dim: int = 32


@dataclass(frozen=True)
class ScheduleSpec:
    base_lr: float = 0.1
    warmup_ratio: float = 0.06


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "glitter"
    k1: int = 2
    eval_mode: EvalMode | None = None  # None picks the regime default
    kd: KDConfig = field(default_factory=KDConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    epochs: int = 20
    batch_size: int = 32
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {', '.join(REGIMES)}")
        if self.k1 < 1:
            raise ConfigError("k1 must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.regime in ("kd", "self_kd") and self.eval_mode is not None and self.eval_mode.tag in ("pred_ce",):
            raise ConfigError("pred_ce scoring is not defined for distillation; use kd_kl, gt_ce or random")

    def resolved_eval_mode(self) -> EvalMode:
        if self.eval_mode is not None:
            return self.eval_mode
        if self.regime in ("kd", "self_kd"):
            return EvalMode("kd_kl", tau=self.kd.tau)
        if self.regime == "glitter_rnd":
            return EvalMode("random")
        return EvalMode("pred_ce")


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    dev_accuracy: float
    dev_f1: float
    epoch_wall_seconds: float
    grad_passes: int
    score_passes: int


HISTORY_COLUMNS = ("epoch", "step", "train_loss", "dev_accuracy", "dev_f1", "epoch_wall_seconds",
                   "grad_passes", "score_passes")


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    n: int


@dataclass
class TrainResult:
    model: ModelParams
    history: list
    step_losses: list
    prediction_cache: "PredictionCache | None" = None

    def __iter__(self):
        yield self.model
        yield self.history


class PredictionCache:
    """Last recorded prediction of each original input (consistency training)."""

    def __init__(self, ids: Sequence[str], C: int):
        self._index = {i: n for n, i in enumerate(ids)}
        self.probs = np.zeros((len(ids), C))
        self.seen = np.zeros(len(ids), dtype=bool)

    def __contains__(self, example_id: str) -> bool:
        n = self._index.get(example_id)
        return n is not None and bool(self.seen[n])

    def __getitem__(self, example_id: str) -> np.ndarray:
        n = self._index[example_id]
        if not self.seen[n]:
            raise KeyError(example_id)
        return self.probs[n]

    def __len__(self) -> int:
        return int(self.seen.sum())


# ---------------------------------------------------------------------------
# encoded training data
# ---------------------------------------------------------------------------

class _Encoded:
    """Training originals and pool entries pre-encoded for one model family."""

    def __init__(self, m: ModelParams, ds: Dataset, pool: AugmentPool | None):
        self.arch = m.arch
        N = len(ds)
        self.counts = np.zeros(N, dtype=np.int64)
        if pool is not None:
            self.counts = np.array([pool.count(i) for i in ds.ids], dtype=np.int64)
        self.width = int(self.counts.max()) if N and pool is not None else 0
        if m.arch == "mlp":
            self.X = encode(m, ds.inputs()).features
            self.P = np.zeros((N, self.width, self.X.shape[1]))
            if pool is not None:
                for n, ex_id in enumerate(ds.ids):
                    entries = pool.entries.get(ex_id, ())
                    if entries:
                        self.P[n, :len(entries)] = np.asarray(entries, dtype=np.float64)
        else:
            self.orig_ids = [token_ids(m, x) for x in ds.inputs()]
            self.pool_ids = [[token_ids(m, x) for x in pool.entries.get(i, ())] if pool is not None else []
                             for i in ds.ids]

    def originals(self, m: ModelParams, idx: np.ndarray) -> Encoded:
        if self.arch == "mlp":
            return Encoded(len(idx), features=self.X[idx])
        return encode_ids(m, [self.orig_ids[i] for i in idx])

    def entries(self, m: ModelParams, ex_idx: np.ndarray, k: np.ndarray) -> Encoded:
        if self.arch == "mlp":
            return Encoded(len(ex_idx), features=self.P[ex_idx, k])
        return encode_ids(m, [self.pool_ids[i][j] for i, j in zip(ex_idx, k)])


class _TeacherLogits:
    """Teacher outputs for originals and pool entries, from a cache or live forwards."""

    def __init__(self, teacher: Teacher, ds: Dataset, pool: AugmentPool | None, cache: dict | None):
        self.teacher = teacher
        self.cache = cache if cache is not None else teacher.cache
        if self.cache is not None:
            C = teacher.params.num_classes
            N = len(ds)
            width = max((pool.count(i) for i in ds.ids), default=0) if pool is not None else 0
            self.T_orig = np.zeros((N, C))
            self.T_pool = np.zeros((N, width, C))
            for n, ex_id in enumerate(ds.ids):
                try:
                    self.T_orig[n] = self.cache[ex_id]
                    for k in range(pool.count(ex_id) if pool is not None else 0):
                        self.T_pool[n, k] = self.cache[f"{ex_id}:{k}"]
                except KeyError as err:
                    raise ValidationError(f"teacher logit cache has no entry {err.args[0]!r}") from None
        else:
            self.enc = _Encoded(teacher.params, ds, pool)

    def originals(self, idx: np.ndarray) -> np.ndarray:
        if self.cache is not None:
            return self.T_orig[idx]
        p = self.teacher.params
        return forward_batch(p, self.enc.originals(p, idx))[0]

    def entries(self, ex_idx: np.ndarray, k: np.ndarray) -> np.ndarray:
        if self.cache is not None:
            return self.T_pool[ex_idx, k]
        p = self.teacher.params
        if len(ex_idx) == 0:
            return np.zeros((0, p.num_classes))
        return forward_batch(p, self.enc.entries(p, ex_idx, k))[0]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def build_model(ds: Dataset, spec: ModelSpec, seed: int) -> ModelParams:
    hidden = list(spec.hidden)
    if spec.arch == "boe":
        if ds.modality != "text":
            raise ConfigError("boe architecture needs a text dataset")
        vocab = build_vocab(ds.inputs())
        dims = {"V": len(vocab) + 1, "d": spec.embed_dim, "hidden": hidden, "C": ds.num_classes}
        return init_model("boe", dims, seed, vocab)
    if spec.arch == "mlp":
        if ds.modality != "features":
            raise ConfigError("mlp architecture needs a feature-vector dataset")
        dims = {"input_dim": len(ds.examples[0].input), "hidden": hidden, "C": ds.num_classes}
        return init_model("mlp", dims, seed)
    raise ConfigError(f"unknown architecture {spec.arch!r}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(ds: Dataset, pool: AugmentPool | None, teacher: Teacher | None, cfg: TrainConfig,
          dev: Dataset | None = None, init: ModelParams | None = None,
          logit_cache: dict | None = None) -> TrainResult:
    """Run one regime end to end. Deterministic for fixed inputs and config."""
    regime = cfg.regime
    if regime == "self_kd":
        return train_self_kd(ds, pool, cfg, dev).student
    if regime != "vanilla" and pool is None:
        raise ConfigError(f"regime {regime!r} needs an augmentation pool")
    if regime == "kd" and teacher is None:
        raise ConfigError("regime 'kd' needs a teacher")
    if pool is not None and not pool.ragged and regime in ("glitter", "ct_glitter", "kd", "glitter_rnd") \
            and cfg.k1 > pool.K:
        raise ConfigError(f"k1={cfg.k1} exceeds pool size K={pool.K}")
    mode = cfg.resolved_eval_mode()
    if regime == "kd" and mode.tag in ("pred_ce",):
        raise ConfigError("pred_ce scoring is not defined for distillation")
    if regime in ("glitter", "ct_glitter") and mode.tag == "kd_kl":
        raise ConfigError("kd_kl scoring needs the kd regime")

    m = init.copy() if init is not None else build_model(ds, cfg.model, cfg.seed)
    if ds.num_classes > m.num_classes:
        raise ValidationError(f"dataset has {ds.num_classes} classes but the model predicts {m.num_classes}")
    C = m.num_classes
    N = len(ds)
    data = _Encoded(m, ds, pool if regime != "vanilla" else None)
    tlog = _TeacherLogits(teacher, ds, pool, logit_cache) if regime == "kd" else None
    labels = ds.labels
    ids = ds.ids
    ct_cache = PredictionCache(ids, C) if regime.startswith("ct_") else None
    steps_per_epoch = math.ceil(N / cfg.batch_size)
    schedule = Schedule(cfg.schedule.base_lr, cfg.schedule.warmup_ratio, cfg.epochs * steps_per_epoch)
    use_random = regime == "glitter_rnd" or (regime in _SCORED and mode.tag == "random")
    scored = regime in _SCORED and not use_random

    history: list[EpochRecord] = []
    step_losses: list[float] = []
    step = 0
    best_acc, since_best = -1.0, 0
    for epoch in range(cfg.epochs):
        grad_passes = score_passes = 0
        losses = []
        t0 = time.perf_counter()
        for b in batch_indices(N, cfg.batch_size, cfg.seed, epoch):
            B = len(b)
            y = labels[b]
            Y = onehot(y, C)
            enc_o = data.originals(m, b)
            logits_o, acts_o = forward_batch(m, enc_o)
            grad_passes += B
            counts = data.counts[b]

            # -- selection --------------------------------------------------
            chosen = None
            if regime in _FULL_POOL:
                chosen = np.where(np.arange(data.width)[None, :] < counts[:, None], np.arange(data.width)[None, :], -1)
            elif use_random:
                chosen = np.full((B, min(cfg.k1, max(data.width, 1))), -1, dtype=np.int64)
                for r, n in enumerate(b):
                    take = min(cfg.k1, int(counts[r]))
                    if take:
                        rng = random_stream(cfg.seed, ids[n], step, mode.seed)
                        chosen[r, :take] = np.sort(rng.choice(int(counts[r]), size=take, replace=False))
            elif scored:
                rr, kk = np.nonzero(np.arange(data.width)[None, :] < counts[:, None])
                aug_logits = forward_batch(m, data.entries(m, b[rr], kk))[0] if len(rr) else np.zeros((0, C))
                score_passes += len(rr)
                orig_probs = _softmax(logits_o)[rr] if mode.tag == "pred_ce" else None
                t_aug = tlog.entries(b[rr], kk) if mode.tag == "kd_kl" else None
                scores = np.zeros((B, data.width))
                scores[rr, kk] = score_rows(mode, aug_logits, y[rr], orig_probs, t_aug)
                chosen = select_topk_rows(scores, counts, cfg.k1)

            # -- forward on the selected set ---------------------------------
            if chosen is not None:
                rs, cs = np.nonzero(chosen >= 0)
                ks = chosen[rs, cs]
                n_sel = np.bincount(rs, minlength=B)
            else:
                rs = ks = np.zeros(0, dtype=np.int64)
                n_sel = np.zeros(B, dtype=np.int64)
            if len(rs):
                enc_s = data.entries(m, b[rs], ks)
                logits_s, acts_s = forward_batch(m, enc_s)
            else:
                enc_s, logits_s, acts_s = None, None, None
            grad_passes += len(rs)

            # -- task loss -------------------------------------------------
            if regime == "kd":
                t_o = tlog.originals(b)
                ce_o, g_ce = xent_rows(logits_o, Y)
                kl_o, g_kl = kl_rows(t_o, logits_o, cfg.kd.tau)
                w = (1.0 - cfg.kd.alpha) / (n_sel + 1)
                loss_i = cfg.kd.alpha * ce_o + w * kl_o
                d_o = cfg.kd.alpha * g_ce + w[:, None] * g_kl
                if len(rs):
                    kl_s, g_s = kl_rows(tlog.entries(b[rs], ks), logits_s, cfg.kd.tau)
                    loss_i = loss_i + np.bincount(rs, weights=w[rs] * kl_s, minlength=B)
                    d_s = w[rs][:, None] * g_s
            else:
                loss_i, d_o = xent_rows(logits_o, Y)
                if len(rs):
                    if ct_cache is not None:
                        p_now = _softmax(logits_o)
                        seen = ct_cache.seen[b]
                        target = np.where(seen[:, None], ct_cache.probs[b], p_now)
                        v_s, g_s = xent_rows(logits_s, target[rs])
                    else:
                        v_s, g_s = xent_rows(logits_s, Y[rs])
                    inv = 1.0 / n_sel[rs]
                    loss_i = loss_i + np.bincount(rs, weights=inv * v_s, minlength=B)
                    d_s = inv[:, None] * g_s
            if ct_cache is not None:
                ct_cache.probs[b] = _softmax(logits_o)
                ct_cache.seen[b] = True

            batch_loss = float(loss_i.mean())
            if not np.isfinite(batch_loss):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, step {step} (batch of {B})")
            grads = backward_batch(m, enc_o, acts_o, d_o)
            if len(rs):
                grads = grads + backward_batch(m, enc_s, acts_s, d_s)
            try:
                m = sgd_step(m, grads.scale(1.0 / B), lr_at(schedule, step))
            except TrainingAborted as err:
                raise TrainingAborted(f"{err} (epoch {epoch}, step {step})") from None
            step_losses.append(batch_loss)
            losses.append(batch_loss)
            step += 1
        wall = time.perf_counter() - t0

        dev_acc = dev_f1 = float("nan")
        if dev is not None:
            met = evaluate(m, dev)
            dev_acc, dev_f1 = met.accuracy, met.macro_f1
        history.append(EpochRecord(epoch + 1, step, float(np.mean(losses)), dev_acc, dev_f1, wall,
                                   grad_passes, score_passes))
        log.debug("epoch %d loss %.4f dev_acc %.4f", epoch + 1, history[-1].train_loss, dev_acc)
        if dev is not None and cfg.patience > 0:
            if dev_acc > best_acc:
                best_acc, since_best = dev_acc, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    log.info("early stop after epoch %d", epoch + 1)
                    break
    return TrainResult(m, history, step_losses, ct_cache)


@dataclass
class SelfKDResult:
    teacher_run: TrainResult
    teacher: Teacher
    student: TrainResult


def train_self_kd(ds: Dataset, pool: AugmentPool, cfg: TrainConfig, dev: Dataset | None = None) -> SelfKDResult:
    """Phase 1: vanilla training. Phase 2: distil it into a freshly initialised twin."""
    if pool is None:
        raise ConfigError("self_kd needs an augmentation pool")
    phase1 = train(ds, None, None, replace(cfg, regime="vanilla", eval_mode=None), dev)
    teacher = freeze(phase1.model)
    cache = cache_teacher_logits(teacher, ds, pool)
    student_init = clone_fresh(phase1.model, cfg.seed + 1)
    mode = cfg.eval_mode if cfg.eval_mode is not None else EvalMode("kd_kl", tau=cfg.kd.tau)
    phase2 = train(ds, pool, teacher.with_cache(cache), replace(cfg, regime="kd", eval_mode=mode), dev,
                   init=student_init)
    return SelfKDResult(phase1, teacher, phase2)


def cache_teacher_logits(teacher: Teacher, ds: Dataset, pool: AugmentPool | None) -> dict:
    """Teacher logits for every original (key ``id``) and pool entry (key ``id:k``)."""
    cache = {}
    orig = teacher.logits(ds.inputs())
    for ex_id, z in zip(ds.ids, orig):
        cache[ex_id] = z
    if pool is not None:
        missing = [i for i in ds.ids if i not in pool.entries]
        if missing:
            raise ValidationError(f"pool has no entries for {len(missing)} id(s), e.g. {missing[0]!r}")
        keys, inputs = [], []
        for ex_id in ds.ids:
            for k, x in enumerate(pool.entries[ex_id]):
                keys.append(f"{ex_id}:{k}")
                inputs.append(x)
        if inputs:
            for key, z in zip(keys, teacher.logits(inputs)):
                cache[key] = z
    return cache


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def macro_f1(labels: np.ndarray, preds: np.ndarray, C: int) -> float:
    scores = []
    for c in range(C):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        if tp + fp + fn == 0:
            warnings.warn(f"class {c} absent from labels and predictions; F1 taken as 0", RuntimeWarning)
            scores.append(0.0)
        else:
            scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def predict(m: ModelParams, ds: Dataset) -> np.ndarray:
    return np.argmax(logits_batch(m, ds.inputs()), axis=1)


def evaluate(m: ModelParams, ds: Dataset) -> Metrics:
    if len(ds) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    if ds.num_classes > m.num_classes:
        raise ValidationError(f"dataset has {ds.num_classes} classes but the model predicts {m.num_classes}")
    labels = ds.labels
    preds = predict(m, ds)
    return Metrics(float(np.mean(preds == labels)), macro_f1(labels, preds, m.num_classes), len(ds))


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            w.writerow([r.epoch, r.step, repr(r.train_loss), repr(r.dev_accuracy), repr(r.dev_f1),
                        f"{r.epoch_wall_seconds:.6f}", r.grad_passes, r.score_passes])
