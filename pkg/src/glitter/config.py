"""YAML run configuration with strict keys and dot-path overrides.

Layout::

    data:
      train: path/to/train.jsonl
      dev: path/to/dev.jsonl        # optional
      pool: path/to/pool.jsonl      # optional for vanilla
      pool_k: 8                     # expected pool size (optional)
      teacher: path/to/model.json   # kd only
    training:                       # mirrors TrainConfig field for field
      regime: glitter
      k1: 2
      eval_mode: {tag: pred_ce}     # or null for the regime default
      kd: {alpha: 0.5, tau: 12.0}
      model: {arch: mlp, hidden: [64], embed_dim: 32}
      epochs: 20
      batch_size: 32
      schedule: {base_lr: 0.1, warmup_ratio: 0.06}
      seed: 0
      patience: 10
"""

from __future__ import annotations

import dataclasses
from typing import Any

import yaml

from .errors import ConfigError
from .losses import KDConfig
from .selection import EvalMode
from .training import ModelSpec, ScheduleSpec, TrainConfig

DATA_KEYS = ("train", "dev", "pool", "pool_k", "teacher")
_NESTED = {"eval_mode": EvalMode, "kd": KDConfig, "model": ModelSpec, "schedule": ScheduleSpec}


def default_document() -> dict:
    return {"data": {k: None for k in DATA_KEYS}, "training": to_dict(TrainConfig())}


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, val in values.items():
        if key in _NESTED and cls is TrainConfig:
            kwargs[key] = None if val is None else _build(_NESTED[key], val, f"{where}.{key}")
        elif key == "hidden":
            kwargs[key] = tuple(int(h) for h in (val or []))
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from None


def train_config_from_dict(values: dict) -> TrainConfig:
    return _build(TrainConfig, values, "training")


def _check_document(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(doc) - {"data", "training"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    data = doc.get("data") or {}
    bad = sorted(set(data) - set(DATA_KEYS))
    if bad:
        raise ConfigError(f"unknown key(s) in data: {', '.join(bad)}")
    merged = default_document()
    merged["data"].update(data)
    training = doc.get("training") or {}
    train_config_from_dict(training)  # validate early
    merged["training"] = _deep_update(merged["training"], training)
    return merged


def _deep_update(base: dict, upd: dict) -> dict:
    out = dict(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    if path is None:
        return default_document()
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: {err}") from None
    return _check_document(doc)


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key[.sub]=value`` strings; values are parsed as YAML scalars."""
    doc = _deep_update(doc, {})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = doc
        for depth, key in enumerate(keys[:-1]):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"override {path!r}: no such key {'.'.join(keys[:depth + 1])!r}")
            if node[key] is None and keys[:depth + 1] == ["training", "eval_mode"]:
                node[key] = to_dict(EvalMode())
            node[key] = dict(node[key]) if isinstance(node[key], dict) else node[key]
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"override {path!r}: no such key")
        node[keys[-1]] = yaml.safe_load(raw)
    return _check_document(doc)


def train_config(doc: dict) -> TrainConfig:
    return train_config_from_dict(doc["training"])
