"""Runtime sweeps: Vanilla-DA over pool sizes versus Glitter (K, k1) points."""

from __future__ import annotations

import csv
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import AugmentPool, Dataset
from .errors import ConfigError
from .selection import EvalMode
from .training import TrainConfig, train, write_history_csv

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("regime", "K", "k1", "seed", "epoch_wall_seconds", "dev_accuracy",
                  "grad_passes_per_epoch", "score_passes_per_epoch", "error")


@dataclass(frozen=True)
class SweepSpec:
    sizes: tuple = (1, 2, 4, 6, 8)
    glitter_points: tuple = ((8, 1), (8, 2))
    seeds: tuple = (0,)
    base: TrainConfig = field(default_factory=lambda: TrainConfig(regime="glitter"))
    glitter_eval: EvalMode | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("a sweep needs at least one seed")
        for K, k1 in self.glitter_points:
            if not 1 <= k1 <= K:
                raise ConfigError(f"glitter point ({K}, {k1}) needs 1 <= k1 <= K")
        if any(K < 1 for K in self.sizes):
            raise ConfigError("augmentation sizes must be positive")

    def points(self) -> list[tuple[str, int, int]]:
        return [("vanilla_da", K, K) for K in self.sizes] + [("glitter", K, k1) for K, k1 in self.glitter_points]


@dataclass
class SweepRow:
    regime: str
    K: int
    k1: int
    seed: int
    epoch_wall_seconds: float
    dev_accuracy: float
    grad_passes_per_epoch: float
    score_passes_per_epoch: float
    error: str = ""

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)


def median_epoch_seconds(walls) -> float:
    """Median over epochs after the first (the first one pays JIT and cache warm-up)."""
    walls = list(walls)
    if not walls:
        return float("nan")
    return float(np.median(walls[1:] if len(walls) > 1 else walls))


def _run_point(ds, dev, pool, spec, regime, K, k1, seed, history_dir):
    cfg = replace(spec.base, regime=regime, k1=k1, seed=seed, patience=0,
                  eval_mode=spec.glitter_eval if regime == "glitter" else None)
    try:
        res = train(ds, pool.truncate(K), None, cfg, dev)
    except Exception as err:  # one failed point must not sink the sweep
        log.error("sweep point %s K=%d k1=%d seed=%d failed: %s", regime, K, k1, seed, err)
        log.debug("%s", traceback.format_exc())
        nan = float("nan")
        return SweepRow(regime, K, k1, seed, nan, nan, nan, nan, f"{type(err).__name__}: {err}")
    hist = res.history
    if history_dir is not None:
        write_history_csv(hist, Path(history_dir) / f"{regime}_K{K}_k{k1}_s{seed}.csv")
    return SweepRow(regime, K, k1, seed,
                    median_epoch_seconds(h.epoch_wall_seconds for h in hist),
                    hist[-1].dev_accuracy,
                    float(np.mean([h.grad_passes for h in hist])),
                    float(np.mean([h.score_passes for h in hist])))


def run_sweep(ds: Dataset, pool: AugmentPool, spec: SweepSpec, dev: Dataset | None = None,
              history_dir=None, parallel: int = 0) -> SweepReport:
    """Train every (point, seed). Sub-K pools are prefixes of ``pool``.

    Points run sequentially unless ``parallel`` > 1, in which case wall
    times share the machine and should not be compared.
    """
    needed = max([K for _, K, _ in spec.points()], default=0)
    if needed > pool.K:
        raise ConfigError(f"sweep needs K={needed} but the pool only has K={pool.K}")
    if history_dir is not None:
        Path(history_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(regime, K, k1, seed) for regime, K, k1 in spec.points() for seed in spec.seeds]
    if parallel > 1:
        log.warning("running %d sweep points in parallel; wall times are unreliable", len(jobs))
        with ProcessPoolExecutor(parallel) as ex:
            futs = [ex.submit(_run_point, ds, dev, pool, spec, *job, history_dir) for job in jobs]
            rows = [f.result() for f in futs]
    else:
        rows = [_run_point(ds, dev, pool, spec, *job, history_dir) for job in jobs]
    return SweepReport(rows)


def emit_report(report: SweepReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.as_tuple()])
