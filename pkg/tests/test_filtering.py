import csv
import logging

import numpy as np
import pytest

from glitter.data import load_pool, save_pool
from glitter.errors import ConfigError
from glitter.filtering import (FilterConfig, apply_filter, confidence_filter, label_preserving_filter,
                               write_retention_report)
from glitter.model import forward
from glitter.synth import make_noisy_aug
from glitter.training import ModelSpec, TrainConfig, ScheduleSpec, train


@pytest.fixture(scope="module")
def setup():
    out = make_noisy_aug(seed=2, n_train=60, n_dev=10, dim=4, K=6)
    cfg = TrainConfig(regime="vanilla", epochs=3, batch_size=16, model=ModelSpec("mlp", (8,)),
                      schedule=ScheduleSpec(0.3, 0.0))
    m = train(out.train, None, None, cfg).model
    return out.train, out.pool, m


def brute_force_label_preserving(pool, m, ds):
    kept = {}
    for ex in ds.examples:
        want = int(np.argmax(forward(m, ex.input).probabilities))
        kept[ex.id] = tuple(x for x in pool[ex.id] if int(np.argmax(forward(m, x).probabilities)) == want)
    return kept


def test_beta_zero_keeps_everything(setup):
    ds, pool, m = setup
    assert confidence_filter(pool, m, ds, 0.0).total() == pool.total()


def test_retention_monotone_in_beta(setup):
    ds, pool, m = setup
    kept = [confidence_filter(pool, m, ds, b).total() for b in (0.0, 0.4, 0.7, 0.9, 0.99)]
    assert kept == sorted(kept, reverse=True)


def test_confidence_matches_brute_force(setup):
    ds, pool, m = setup
    out = confidence_filter(pool, m, ds, 0.7)
    for ex in ds.examples:
        want = tuple(x for x in pool[ex.id] if forward(m, x).probabilities.max() >= 0.7)
        assert out[ex.id] == want


def test_label_preserving_matches_brute_force(setup):
    ds, pool, m = setup
    assert label_preserving_filter(pool, m, ds).entries == brute_force_label_preserving(pool, m, ds)


def test_unreachable_beta_empties_pool(setup, caplog):
    ds, pool, m = setup
    with caplog.at_level(logging.WARNING):
        out = confidence_filter(pool, m, ds, 1.5)
    assert out.total() == 0 and out.ragged
    assert "discard" in caplog.text


def test_filtered_pool_round_trip(tmp_path, setup):
    ds, pool, m = setup
    out = confidence_filter(pool, m, ds, 0.9)
    save_pool(out, tmp_path / "p.jsonl", ds.ids)
    back = load_pool(tmp_path / "p.jsonl", ds, relaxed=True)
    assert all(back.count(i) == out.count(i) for i in ds.ids)


def test_retention_report(tmp_path, setup):
    ds, pool, m = setup
    out = apply_filter(FilterConfig("confidence", 0.7), pool, m, ds)
    write_retention_report(pool, out, ds, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == len(ds) + 1
    total = rows[-1]
    assert total["id"] == "__total__"
    assert int(total["before"]) == pool.total() and int(total["kept"]) == out.total()
    assert sum(int(r["kept"]) for r in rows[:-1]) == out.total()


@pytest.mark.parametrize("kw", [dict(kind="confidence"), dict(kind="label_preserving", beta=0.5),
                                dict(kind="confidence", beta=-1.0), dict(kind="topk")])
def test_filter_config_errors(kw):
    with pytest.raises(ConfigError):
        FilterConfig(**kw)
