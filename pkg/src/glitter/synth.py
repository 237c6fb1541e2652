"""Desk-scale synthetic tasks with ready-made augmentation pools.

separable  2-class Gaussian blobs with a guaranteed margin; perturb pool.
noisy-aug  3-class blobs where a fixed fraction of pool entries are drawn from
           a wrong class's blob but keep the original label.
text-toy   2-class keyword sentences; EDA pool from the bundled lexicon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, build_pool, default_lexicon
from .data import AugmentPool, Dataset, Example, save_dataset, save_pool
from .errors import ConfigError
from .rng import keyed_rng

PRESETS = ("separable", "noisy-aug", "text-toy")


@dataclass
class SynthOutput:
    train: Dataset
    dev: Dataset
    pool: AugmentPool
    manifest: dict


def _blob_dataset(X: np.ndarray, y: np.ndarray, prefix: str, C: int, split: str) -> Dataset:
    exs = tuple(Example(f"{prefix}-{i}", tuple(float(v) for v in row), int(lab))
                for i, (row, lab) in enumerate(zip(X, y)))
    return Dataset(exs, C, split)


def make_separable(seed: int = 0, n_train: int = 200, n_dev: int = 100, dim: int = 4, K: int = 8,
                   margin: float = 1.0, noise_scale: float = 0.1) -> SynthOutput:
    """Class c sits at x0 = +/-(margin + |N(1, 1)|); the plane x0 = 0 separates with gap 2*margin."""
    rng = keyed_rng(seed, "separable")

    def draw(n):
        y = rng.integers(0, 2, size=n)
        X = rng.standard_normal((n, dim))
        X[:, 0] = (margin + np.abs(1.0 + rng.standard_normal(n))) * np.where(y == 1, 1.0, -1.0)
        return X, y

    train = _blob_dataset(*draw(n_train), "tr", 2, "train")
    dev = _blob_dataset(*draw(n_dev), "dv", 2, "dev")
    pool = build_pool(train, AugmentConfig("perturb", K=K, noise_scale=noise_scale, seed=seed))
    return SynthOutput(train, dev, pool, {"preset": "separable", "seed": seed, "margin": margin})


def make_noisy_aug(seed: int = 0, n_train: int = 500, n_dev: int = 500, dim: int = 8, K: int = 8,
                   corrupt_fraction: float = 0.25, separation: float = 2.5,
                   noise_scale: float = 0.5) -> SynthOutput:
    """Exactly ``floor(corrupt_fraction * N * K)`` pool entries are label-corrupting."""
    if not 0.0 <= corrupt_fraction <= 1.0:
        raise ConfigError("corrupt_fraction must lie in [0, 1]")
    C = 3
    rng = keyed_rng(seed, "noisy-aug")
    means = rng.standard_normal((C, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = rng.integers(0, C, size=n)
        return means[y] + rng.standard_normal((n, dim)), y

    Xtr, ytr = draw(n_train)
    Xdv, ydv = draw(n_dev)
    train = _blob_dataset(Xtr, ytr, "tr", C, "train")
    dev = _blob_dataset(Xdv, ydv, "dv", C, "dev")
    clean = build_pool(train, AugmentConfig("perturb", K=K, noise_scale=noise_scale, seed=seed))

    n_bad = math.floor(corrupt_fraction * n_train * K)
    slots = np.sort(rng.permutation(n_train * K)[:n_bad])
    entries = {i: list(v) for i, v in clean.entries.items()}
    corrupted = []
    for s in slots:
        n, k = divmod(int(s), K)
        wrong = (ytr[n] + 1 + rng.integers(0, C - 1)) % C
        x = means[wrong] + rng.standard_normal(dim)
        ex_id = train.examples[n].id
        entries[ex_id][k] = tuple(float(v) for v in x)
        corrupted.append([ex_id, k, int(wrong)])
    pool = AugmentPool({i: tuple(v) for i, v in entries.items()}, K)
    manifest = {"preset": "noisy-aug", "seed": seed, "K": K, "corrupt_fraction": corrupt_fraction,
                "n_corrupted": len(corrupted), "corrupted": corrupted}
    return SynthOutput(train, dev, pool, manifest)


_POS = ["good", "great", "excellent", "happy", "love", "wonderful", "enjoyable", "superb", "nice", "perfect"]
_NEG = ["bad", "awful", "terrible", "sad", "hate", "horrible", "boring", "dreadful", "annoying", "useless"]
_FILLER = ["the", "a", "movie", "book", "story", "song", "car", "house", "really", "very", "was", "is",
           "this", "that", "my", "friend", "said", "it", "quite", "food", "shop", "and", "of", "city",
           "road", "old", "new", "big", "small", "often", "teacher", "student", "job", "plan", "idea"]


def make_text_toy(seed: int = 0, n_train: int = 200, n_dev: int = 100, K: int = 8) -> SynthOutput:
    rng = keyed_rng(seed, "text-toy")

    def draw(n, prefix, split):
        exs = []
        for i in range(n):
            y = int(rng.integers(0, 2))
            length = int(rng.integers(8, 15))
            words = [_FILLER[j] for j in rng.integers(0, len(_FILLER), size=length)]
            keys = _POS if y == 1 else _NEG
            for pos in rng.choice(length, size=2, replace=False):
                words[pos] = keys[int(rng.integers(len(keys)))]
            exs.append(Example(f"{prefix}-{i}", " ".join(words), y))
        return Dataset(tuple(exs), 2, split)

    train = draw(n_train, "tr", "train")
    dev = draw(n_dev, "dv", "dev")
    pool = build_pool(train, AugmentConfig("eda", K=K, seed=seed), default_lexicon())
    return SynthOutput(train, dev, pool, {"preset": "text-toy", "seed": seed, "K": K})


def synth(preset: str, seed: int = 0, out_dir=None, **kwargs) -> SynthOutput:
    makers = {"separable": make_separable, "noisy-aug": make_noisy_aug, "text-toy": make_text_toy}
    if preset not in makers:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    out = makers[preset](seed=seed, **kwargs)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        save_dataset(out.train, d / "train.jsonl")
        save_dataset(out.dev, d / "dev.jsonl")
        save_pool(out.pool, d / "pool.jsonl", out.train.ids)
        with open(d / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(out.manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return out
