"""Worst-case subset selection from an augmentation pool.

Each pool entry is scored by an evaluation loss under the current model
(no gradients), and the ``k1`` highest-scoring entries are kept. Ties go to
the lower pool index, so selection is a total, reproducible order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import Example
from .errors import ConfigError, ValidationError
from .losses import focal_rows, kl_rows, onehot, tilted_rows, xent_rows
from .model import ModelParams, Teacher, logits_batch
from .rng import keyed_rng

EVAL_TAGS = ("gt_ce", "pred_ce", "kd_kl", "focal", "tilted", "random")


@dataclass(frozen=True)
class EvalMode:
    tag: str = "pred_ce"
    gamma: float = 2.0  # focal
    t: float = 1.0  # tilted
    tau: float = 12.0  # kd_kl
    seed: int = 0  # random

    def __post_init__(self):
        if self.tag not in EVAL_TAGS:
            raise ConfigError(f"unknown eval mode {self.tag!r}; expected one of {', '.join(EVAL_TAGS)}")
        if self.tag == "tilted" and self.t == 0:
            raise ConfigError("tilted eval mode needs t != 0")
        if self.tag == "focal" and self.gamma < 0:
            raise ConfigError("focal eval mode needs gamma >= 0")
        if self.tag == "kd_kl" and not self.tau > 0:
            raise ConfigError("kd_kl eval mode needs tau > 0")


@dataclass(frozen=True)
class SelectionResult:
    example_id: str
    chosen: tuple
    scores: np.ndarray = field(repr=False)


def score_rows(mode: EvalMode, aug_logits: np.ndarray, labels: np.ndarray,
               orig_probs: np.ndarray | None = None, teacher_logits: np.ndarray | None = None) -> np.ndarray:
    """Evaluation loss of each augmented row against its own reference.

    ``labels``/``orig_probs``/``teacher_logits`` are aligned row-for-row with
    ``aug_logits``.
    """
    C = aug_logits.shape[1]
    tag = mode.tag
    if tag == "gt_ce":
        return xent_rows(aug_logits, onehot(labels, C))[0]
    if tag == "pred_ce":
        return xent_rows(aug_logits, orig_probs)[0]
    if tag == "kd_kl":
        if teacher_logits is None:
            raise ConfigError("kd_kl scoring needs a teacher")
        return kl_rows(teacher_logits, aug_logits, mode.tau)[0]
    if tag == "focal":
        return focal_rows(aug_logits, labels, mode.gamma)
    if tag == "tilted":
        return tilted_rows(xent_rows(aug_logits, onehot(labels, C))[0], mode.t)
    return np.zeros(len(aug_logits))


def score_pool(m: ModelParams, teacher: Teacher | None, ex: Example, pool_entries: Sequence,
               mode: EvalMode) -> np.ndarray:
    """Length-K vector of evaluation losses for one example's pool."""
    if mode.tag == "kd_kl" and teacher is None:
        raise ConfigError("eval mode kd_kl requires a teacher")
    K = len(pool_entries)
    if K == 0:
        return np.zeros(0)
    aug_logits = logits_batch(m, list(pool_entries))
    labels = np.full(K, ex.label, dtype=np.int64)
    orig_probs = None
    if mode.tag == "pred_ce":
        z = logits_batch(m, [ex.input])[0]
        e = np.exp(z - z.max())
        orig_probs = np.tile(e / e.sum(), (K, 1))
    t_logits = None
    if mode.tag == "kd_kl":
        keys = [f"{ex.id}:{k}" for k in range(K)]
        if teacher.cache is not None and all(k in teacher.cache for k in keys):
            t_logits = np.array([teacher.cache[k] for k in keys])
        else:
            t_logits = teacher.logits(list(pool_entries))
    return score_rows(mode, aug_logits, labels, orig_probs, t_logits)


def _check_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValidationError("scores must be a vector")
    nan = np.flatnonzero(np.isnan(scores))
    if nan.size:
        raise ValidationError(f"NaN score at pool index {int(nan[0])}")
    return scores


def select_topk(scores, k1: int, example_id: str = "") -> SelectionResult:
    """Indices of the ``k1`` largest scores, ascending; ties favour the lower index."""
    if k1 < 1:
        raise ConfigError("k1 must be at least 1")
    scores = _check_scores(scores)
    K = len(scores)
    chosen = kernels.topk_rows(scores[None, :], np.array([K]), min(k1, K))[0]
    return SelectionResult(example_id, tuple(int(i) for i in chosen), scores)


def select_topk_rows(scores: np.ndarray, counts: np.ndarray, k1: int) -> np.ndarray:
    """Batched :func:`select_topk`; rows are padded with -1 past ``min(k1, count)``."""
    if np.isnan(scores).any():
        r, c = np.argwhere(np.isnan(scores))[0]
        raise ValidationError(f"NaN score at batch row {int(r)}, pool index {int(c)}")
    return kernels.topk_rows(scores, counts, k1)


def random_stream(seed: int, example_id: str, step: int, salt: int = 0) -> np.random.Generator:
    return keyed_rng(seed, "select", example_id, step, salt)


def select_random(K: int, k1: int, rng_stream: np.random.Generator, example_id: str = "") -> SelectionResult:
    """``k1`` distinct uniformly drawn pool indices (ascending); scores are zeros."""
    if not 1 <= k1 <= K:
        raise ConfigError(f"random selection needs 1 <= k1 <= K, got k1={k1}, K={K}")
    chosen = np.sort(rng_stream.choice(K, size=k1, replace=False))
    return SelectionResult(example_id, tuple(int(i) for i in chosen), np.zeros(K))
