"""Offline augmentation pools.

``eda``: synonym replacement followed by random deletion, on whitespace
tokens. ``perturb``: additive Gaussian noise on feature vectors.

Each (seed, example id, variant index) gets its own random stream, so pools
can be generated in any order or in parallel with identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .data import AugmentPool, Dataset, Example
from .errors import ConfigError, ValidationError
from .model import tokenize
from .rng import keyed_rng

METHODS = ("eda", "perturb")


@dataclass(frozen=True)
class AugmentConfig:
    method: str = "eda"
    K: int = 8
    synonym_rate: float = 0.05
    deletion_rate_max: float = 0.10
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown augmentation method {self.method!r}")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if not 0.0 <= self.synonym_rate <= 1.0:
            raise ConfigError("synonym_rate must lie in [0, 1]")
        if not 0.0 <= self.deletion_rate_max <= 1.0:
            raise ConfigError("deletion_rate_max must lie in [0, 1]")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")


class Lexicon(dict):
    """word -> tuple of synonyms (never the word itself)."""

    @classmethod
    def from_pairs(cls, mapping: dict) -> "Lexicon":
        lex = cls()
        for word, syns in mapping.items():
            word = word.lower()
            clean = tuple(dict.fromkeys(s.lower() for s in syns if s.lower() != word))
            if clean:
                lex[word] = clean
        return lex


def load_lexicon(path) -> Lexicon:
    """Parse ``word<TAB>syn1,syn2,...`` lines; blank lines and ``#`` comments are skipped."""
    mapping: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise ValidationError(f"{path}:{lineno}: expected word<TAB>synonyms")
            word, syns = line.split("\t", 1)
            mapping.setdefault(word.strip(), []).extend(s.strip() for s in syns.split(",") if s.strip())
    return Lexicon.from_pairs(mapping)


def default_lexicon() -> Lexicon:
    with resources.as_file(resources.files("glitter") / "resources" / "lexicon.tsv") as p:
        return load_lexicon(p)


def eda_variant(tokens: Sequence[str], cfg: AugmentConfig, lex: Lexicon, rng: np.random.Generator):
    """One EDA variant. Returns ``(tokens, n_replaced, n_deleted)``."""
    toks = list(tokens)
    T = len(toks)
    n_rep = math.ceil(cfg.synonym_rate * T) if cfg.synonym_rate > 0 else 0
    replaced = 0
    if n_rep:
        candidates = [i for i, t in enumerate(toks) if t in lex]
        if candidates:
            picks = rng.choice(len(candidates), size=min(n_rep, len(candidates)), replace=False)
            for p in sorted(picks):
                pos = candidates[p]
                syns = lex[toks[pos]]
                toks[pos] = syns[int(rng.integers(len(syns)))]
                replaced += 1
    deleted = 0
    if cfg.deletion_rate_max > 0:
        d = rng.uniform(0.0, cfg.deletion_rate_max)
        deleted = min(int(math.floor(d * T)), T - 1)
        if deleted:
            drop = set(rng.choice(T, size=deleted, replace=False).tolist())
            toks = [t for i, t in enumerate(toks) if i not in drop]
    return toks, replaced, deleted


def eda_augment(ex: Example, cfg: AugmentConfig, lex: Lexicon) -> list[str]:
    if not isinstance(ex.input, str):
        raise ValidationError(f"{ex.id}: eda needs a text example")
    tokens = tokenize(ex.input)
    if not tokens:
        raise ValidationError(f"{ex.id}: empty text")
    out = []
    for k in range(cfg.K):
        toks, _, _ = eda_variant(tokens, cfg, lex, keyed_rng(cfg.seed, "eda", ex.id, k))
        out.append(" ".join(toks))
    return out


def perturb_augment(ex: Example, cfg: AugmentConfig) -> list[tuple]:
    if isinstance(ex.input, str):
        raise ValidationError(f"{ex.id}: perturb needs a feature-vector example")
    x = np.asarray(ex.input, dtype=np.float64)
    out = []
    for k in range(cfg.K):
        g = keyed_rng(cfg.seed, "perturb", ex.id, k).standard_normal(x.shape)
        out.append(tuple((x + cfg.noise_scale * g).tolist()))
    return out


def build_pool(ds: Dataset | Sequence[Example], cfg: AugmentConfig, lex: Lexicon | None = None) -> AugmentPool:
    if cfg.method == "eda" and lex is None:
        raise ConfigError("eda augmentation needs a lexicon")
    if cfg.method == "perturb" and lex is not None:
        raise ConfigError("a lexicon is only used by eda")
    examples = ds.examples if isinstance(ds, Dataset) else tuple(ds)
    entries = {}
    for ex in examples:
        try:
            variants = eda_augment(ex, cfg, lex) if cfg.method == "eda" else perturb_augment(ex, cfg)
        except ValidationError as err:
            raise ValidationError(f"example {ex.id!r}: {err}") from None
        entries[ex.id] = tuple(variants)
    return AugmentPool(entries, cfg.K)
