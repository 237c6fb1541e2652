"""Scalar objectives and per-sample scoring functions.

Every loss returns a :class:`LossValue` holding the value and the gradient
with respect to the logits of each contributing input. Composite task
losses order their gradient rows as ``[original, selected_1, ..., selected_k]``.

The ``*_rows`` helpers are the vectorised forms used by the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ValidationError
from .model import Prediction


@dataclass(frozen=True)
class LossValue:
    value: float
    grad_wrt_logits: np.ndarray


@dataclass(frozen=True)
class KDConfig:
    alpha: float = 0.5
    tau: float = 12.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


def _target_vector(target, C: int) -> np.ndarray:
    if np.ndim(target) == 0:
        y = int(target)
        if not 0 <= y < C:
            raise ValidationError(f"target index {y} outside [0, {C})")
        vec = np.zeros(C)
        vec[y] = 1.0
        return vec
    vec = np.asarray(target, dtype=np.float64)
    if vec.shape != (C,):
        raise ValidationError(f"target vector must have length {C}")
    if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-6:
        raise ValidationError("target vector is not a probability distribution")
    return vec


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# row-wise primitives
# ---------------------------------------------------------------------------

def xent_rows(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy per row against probability targets, and d/dlogits."""
    values, q = kernels.softmax_xent(logits, targets)
    return values, q - targets


def kl_rows(teacher_logits: np.ndarray, student_logits: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """``tau^2 * KL(softmax(t/tau) || softmax(s/tau))`` per row, and d/dstudent."""
    log_p = _log_softmax(np.asarray(teacher_logits, dtype=np.float64) / tau)
    log_q = _log_softmax(np.asarray(student_logits, dtype=np.float64) / tau)
    p = np.exp(log_p)
    values = tau * tau * (p * (log_p - log_q)).sum(axis=1)
    return np.maximum(values, 0.0), tau * (np.exp(log_q) - p)


def onehot(labels: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((len(labels), C))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# per-sample losses
# ---------------------------------------------------------------------------

def cross_entropy(target, pred: Prediction) -> LossValue:
    C = len(pred.logits)
    t = _target_vector(target, C)
    log_q = _log_softmax(pred.logits)
    value = float(-(t * log_q).sum())
    return LossValue(value, pred.probabilities - t)


def kl_divergence(teacher_logits, student_logits, tau: float) -> LossValue:
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ValidationError(f"logit length mismatch: {t.shape} vs {s.shape}")
    if not tau > 0:
        raise ConfigError("tau must be positive")
    log_p = _log_softmax(t / tau)
    log_q = _log_softmax(s / tau)
    p = np.exp(log_p)
    value = tau * tau * float((p * (log_p - log_q)).sum())
    return LossValue(max(value, 0.0), tau * (np.exp(log_q) - p))


def focal(target: int, pred: Prediction, gamma: float = 2.0) -> LossValue:
    """``-(1 - p_y)^gamma * log p_y``; gamma=0 is plain cross-entropy."""
    C = len(pred.logits)
    y = int(target)
    if not 0 <= y < C:
        raise ValidationError(f"target index {y} outside [0, {C})")
    if gamma < 0:
        raise ConfigError("gamma must be non-negative")
    log_p = _log_softmax(pred.logits)[y]
    p = float(np.exp(log_p))
    w = (1.0 - p) ** gamma
    value = -w * log_p
    # dL/dp_y, then dp_y/dz = p_y * (e_y - q)
    dw = gamma * (1.0 - p) ** (gamma - 1.0) if gamma > 0 and p < 1.0 else 0.0
    dL_dp = dw * log_p - w / p
    e = np.zeros(C)
    e[y] = 1.0
    return LossValue(float(value), dL_dp * p * (e - pred.probabilities))


_TILT_CAP = np.log(np.finfo(np.float64).max) - 1.0


def tilted(target: int, pred: Prediction, t: float = 1.0) -> LossValue:
    """``(exp(t * ce) - 1) / t``, a strictly increasing transform of cross-entropy.

    Exponents beyond float range saturate to the largest finite value.
    """
    if t == 0:
        raise ConfigError("tilt t must be non-zero")
    ce = cross_entropy(target, pred)
    arg = t * ce.value
    if arg > _TILT_CAP:
        return LossValue(float(np.finfo(np.float64).max), np.zeros_like(ce.grad_wrt_logits))
    value = float(np.expm1(arg) / t)
    return LossValue(value, np.exp(arg) * ce.grad_wrt_logits)


def tilted_rows(ce_values: np.ndarray, t: float) -> np.ndarray:
    arg = np.minimum(t * ce_values, _TILT_CAP)
    return np.expm1(arg) / t


def focal_rows(logits: np.ndarray, labels: np.ndarray, gamma: float) -> np.ndarray:
    log_p = _log_softmax(logits)[np.arange(len(labels)), labels]
    return -((1.0 - np.exp(log_p)) ** gamma) * log_p


# ---------------------------------------------------------------------------
# composite task losses
# ---------------------------------------------------------------------------

def single_task_loss(y: int, pred_orig: Prediction, preds_selected: Sequence[Prediction],
                     k1: int | None = None) -> LossValue:
    """CE on the original plus the mean CE over the selected augmentations."""
    k1 = len(preds_selected) if k1 is None else k1
    if k1 != len(preds_selected):
        raise ValidationError(f"expected {k1} selected predictions, got {len(preds_selected)}")
    base = cross_entropy(y, pred_orig)
    rows = [base.grad_wrt_logits]
    value = base.value
    for p in preds_selected:
        lv = cross_entropy(y, p)
        value += lv.value / k1
        rows.append(lv.grad_wrt_logits / k1)
    return LossValue(value, np.array(rows))


def vanilla_da_loss(y: int, pred_orig: Prediction, preds_pool: Sequence[Prediction]) -> LossValue:
    """Vanilla-DA: the single-network loss with the whole pool standing in for the selection."""
    return single_task_loss(y, pred_orig, preds_pool, len(preds_pool))


def ct_task_loss(y: int, pred_orig_now: Prediction, cached_pred_orig_prev, preds_selected_now: Sequence[Prediction],
                 k1: int | None = None) -> LossValue:
    """Consistency loss: augmentations are pulled toward a cached (stop-gradient) prediction."""
    if cached_pred_orig_prev is None:
        raise ValidationError("no cached prediction for this example; seed the cache first")
    k1 = len(preds_selected_now) if k1 is None else k1
    if k1 != len(preds_selected_now):
        raise ValidationError(f"expected {k1} selected predictions, got {len(preds_selected_now)}")
    target = _target_vector(cached_pred_orig_prev, len(pred_orig_now.logits))
    base = cross_entropy(y, pred_orig_now)
    rows = [base.grad_wrt_logits]
    value = base.value
    for p in preds_selected_now:
        lv = cross_entropy(target, p)
        value += lv.value / k1
        rows.append(lv.grad_wrt_logits / k1)
    return LossValue(value, np.array(rows))


def kd_task_loss(y: int, student_orig, teacher_orig_logits, student_selected: Sequence,
                 teacher_selected_logits: Sequence, cfg: KDConfig, k1: int | None = None) -> LossValue:
    """``alpha * CE(y, s_0) + (1 - alpha) / (k1 + 1) * sum_j KL(t_j, s_j)`` over original and selected.

    Student arguments are logit vectors or :class:`Prediction` objects.
    """
    k1 = len(student_selected) if k1 is None else k1
    if not (len(student_selected) == len(teacher_selected_logits) == k1):
        raise ValidationError("student/teacher selected counts must both equal k1")
    as_logits = lambda s: s.logits if isinstance(s, Prediction) else np.asarray(s, dtype=np.float64)
    s0 = as_logits(student_orig)
    ce = cross_entropy(y, Prediction(s0))
    w = (1.0 - cfg.alpha) / (k1 + 1)
    kl0 = kl_divergence(teacher_orig_logits, s0, cfg.tau)
    value = cfg.alpha * ce.value + w * kl0.value
    rows = [cfg.alpha * ce.grad_wrt_logits + w * kl0.grad_wrt_logits]
    for s, t in zip(student_selected, teacher_selected_logits):
        kl = kl_divergence(t, as_logits(s), cfg.tau)
        value += w * kl.value
        rows.append(w * kl.grad_wrt_logits)
    return LossValue(value, np.array(rows))
