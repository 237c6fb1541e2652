"""Offline pool pre-filters: minimum confidence and label preservation.

Filtered pools are ragged (entries are discarded, never replenished).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import AugmentPool, Dataset
from .errors import ConfigError
from .model import ModelParams, logits_batch

log = logging.getLogger(__name__)

KINDS = ("confidence", "label_preserving")


@dataclass(frozen=True)
class FilterConfig:
    kind: str
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown filter {self.kind!r}")
        if (self.kind == "confidence") != (self.beta is not None):
            raise ConfigError("beta is required for, and only for, the confidence filter")
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be non-negative")


def _pool_probs(m: ModelParams, ds: Dataset, pool: AugmentPool):
    keys, inputs = [], []
    for ex_id in ds.ids:
        for k, x in enumerate(pool.entries.get(ex_id, ())):
            keys.append((ex_id, k))
            inputs.append(x)
    if not inputs:
        return keys, np.zeros((0, m.num_classes))
    z = logits_batch(m, inputs)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return keys, e / e.sum(axis=1, keepdims=True)


def _keep(pool: AugmentPool, ds: Dataset, keys, mask) -> AugmentPool:
    kept = {ex_id: [] for ex_id in ds.ids}
    for (ex_id, k), ok in zip(keys, mask):
        if ok:
            kept[ex_id].append(pool.entries[ex_id][k])
    return AugmentPool({i: tuple(v) for i, v in kept.items()}, pool.K, ragged=True)


def confidence_filter(pool: AugmentPool, m: ModelParams, ds: Dataset, beta: float) -> AugmentPool:
    """Keep entries whose top-class probability is at least ``beta``."""
    if beta > 1.0:
        log.warning("beta=%s is unreachable; every entry will be discarded", beta)
    keys, probs = _pool_probs(m, ds, pool)
    out = _keep(pool, ds, keys, probs.max(axis=1) >= beta if len(keys) else [])
    if out.total() == 0 and pool.total() > 0:
        log.warning("confidence filter (beta=%s) discarded the whole pool", beta)
    return out


def label_preserving_filter(pool: AugmentPool, m: ModelParams, ds: Dataset) -> AugmentPool:
    """Keep entries predicted as the same class as their original (argmax ties -> lower class)."""
    keys, probs = _pool_probs(m, ds, pool)
    orig = dict(zip(ds.ids, np.argmax(logits_batch(m, ds.inputs()), axis=1)))
    aug = np.argmax(probs, axis=1) if len(keys) else []
    return _keep(pool, ds, keys, [a == orig[ex_id] for (ex_id, _), a in zip(keys, aug)])


def apply_filter(cfg: FilterConfig, pool: AugmentPool, m: ModelParams, ds: Dataset) -> AugmentPool:
    if cfg.kind == "confidence":
        return confidence_filter(pool, m, ds, cfg.beta)
    return label_preserving_filter(pool, m, ds)


def retention_rows(before: AugmentPool, after: AugmentPool, ds: Dataset) -> list[tuple]:
    return [(i, before.count(i), after.count(i)) for i in ds.ids]


def write_retention_report(before: AugmentPool, after: AugmentPool, ds: Dataset, path) -> None:
    rows = retention_rows(before, after, ds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("id", "before", "kept", "retention"))
        for ex_id, b, a in rows:
            w.writerow((ex_id, b, a, f"{a / b:.6f}" if b else ""))
        tb, ta = before.total(), after.total()
        w.writerow(("__total__", tb, ta, f"{ta / tb:.6f}" if tb else ""))
