"""Datasets, augmentation pools, and deterministic batching.

Both datasets and pools are line-delimited JSON. A dataset line is
``{"id", "text" | "features", "label"}``; an optional first line
``{"meta": {"num_classes": C, "split": "train"}}`` declares the label space.
A pool line is ``{"id", "aug_index", "text" | "features"}``.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

Input = Union[str, tuple]
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Example:
    id: str
    input: Input  # raw text, or a tuple of floats
    label: int

    @property
    def is_text(self) -> bool:
        return isinstance(self.input, str)


def modality_of(x: Input) -> str:
    return "text" if isinstance(x, str) else "features"


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if not self.examples:
            raise ValidationError("dataset is empty")
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {self.num_classes}")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        seen = set()
        kinds = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ValidationError(f"duplicate id {ex.id!r}")
            seen.add(ex.id)
            if not 0 <= ex.label < self.num_classes:
                raise ValidationError(f"label {ex.label} of {ex.id!r} outside [0, {self.num_classes})")
            if len(ex.input) == 0 or (ex.is_text and not ex.input.split()):
                raise ValidationError(f"empty input for {ex.id!r}")
            kinds.add(modality_of(ex.input))
        if len(kinds) > 1:
            raise ValidationError("dataset mixes text and feature inputs")

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def modality(self) -> str:
        return modality_of(self.examples[0].input)

    @property
    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def inputs(self) -> list[Input]:
        return [ex.input for ex in self.examples]


@dataclass(frozen=True)
class AugmentPool:
    """Per-example augmented inputs, ordered by augmentation index.

    ``K`` is the nominal pool size. Filtered pools are ``ragged``: an
    example may hold fewer than ``K`` entries (possibly none).
    """

    entries: dict
    K: int
    ragged: bool = False

    def __getitem__(self, example_id: str) -> tuple:
        return self.entries[example_id]

    def count(self, example_id: str) -> int:
        return len(self.entries.get(example_id, ()))

    def total(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def truncate(self, k: int) -> "AugmentPool":
        """Prefix of the first ``k`` entries per example."""
        if k < 1 or k > self.K:
            raise ConfigError(f"cannot truncate a K={self.K} pool to {k}")
        return AugmentPool({i: v[:k] for i, v in self.entries.items()}, k, self.ragged)


@dataclass
class Batch:
    originals: list[Example]
    pools: list[tuple] = field(default_factory=list)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as err:
                raise ParseError(f"invalid JSON ({err.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            yield lineno, obj


def _parse_input(obj: dict, lineno: int) -> Input:
    has_text = "text" in obj
    has_feat = "features" in obj
    if has_text == has_feat:
        raise ParseError("need exactly one of 'text' or 'features'", lineno)
    if has_text:
        if not isinstance(obj["text"], str):
            raise ParseError("'text' must be a string", lineno)
        return obj["text"]
    feats = obj["features"]
    if not isinstance(feats, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats):
        raise ParseError("'features' must be a list of numbers", lineno)
    return tuple(float(v) for v in feats)


def load_dataset(path, split: str | None = None) -> Dataset:
    examples = []
    declared_c = None
    meta_split = None
    for lineno, obj in _read_jsonl(path):
        if "meta" in obj:
            if examples:
                raise ParseError("meta line must come first", lineno)
            meta = obj["meta"]
            declared_c = meta.get("num_classes")
            meta_split = meta.get("split")
            continue
        for key in ("id", "label"):
            if key not in obj:
                raise ParseError(f"missing field {key!r}", lineno)
        label = obj["label"]
        if not isinstance(label, int) or isinstance(label, bool) or label < 0:
            raise ParseError(f"label must be a non-negative integer, got {label!r}", lineno)
        examples.append(Example(str(obj["id"]), _parse_input(obj, lineno), label))
    if not examples:
        raise ValidationError(f"{path}: no examples")
    num_classes = declared_c if declared_c is not None else max(ex.label for ex in examples) + 1
    return Dataset(tuple(examples), int(num_classes), split or meta_split or "train")


def load_pool(path, ds: Dataset, expected_K: int | None = None, relaxed: bool = False) -> AugmentPool:
    """Read a pool file and check it against ``ds``.

    With ``relaxed=True`` (filtered pools) per-example counts may be anywhere
    in ``[0, expected_K]`` and missing ids are treated as empty.
    """
    if expected_K is not None and expected_K < 1:
        raise ConfigError("expected_K must be positive")
    known = {ex.id for ex in ds.examples}
    modality = ds.modality
    buckets: dict[str, list] = defaultdict(list)
    for lineno, obj in _read_jsonl(path):
        for key in ("id", "aug_index"):
            if key not in obj:
                raise ParseError(f"missing field {key!r}", lineno)
        ex_id = str(obj["id"])
        if ex_id not in known:
            raise ValidationError(f"orphan pool entry: id {ex_id!r} (line {lineno}) is not in the dataset")
        x = _parse_input(obj, lineno)
        if modality_of(x) != modality:
            raise ValidationError(f"line {lineno}: pool modality {modality_of(x)} does not match dataset {modality}")
        buckets[ex_id].append((int(obj["aug_index"]), lineno, x))

    entries = {}
    counts = {}
    for ex_id in ds.ids:
        rows = sorted(buckets.get(ex_id, []), key=lambda r: r[0])
        idx = [r[0] for r in rows]
        if len(set(idx)) != len(idx):
            raise ValidationError(f"id {ex_id!r} repeats an aug_index")
        entries[ex_id] = tuple(r[2] for r in rows)
        counts[ex_id] = len(rows)

    if expected_K is None:
        expected_K = max(counts.values()) if counts else 0
        if expected_K == 0:
            raise ValidationError("pool is empty")
    if relaxed:
        over = [i for i, c in counts.items() if c > expected_K]
        if over:
            raise ValidationError(f"pool cardinality > K={expected_K} for ids: {', '.join(over[:10])}")
        ragged = any(c != expected_K for c in counts.values())
    else:
        bad = [i for i, c in counts.items() if c != expected_K]
        if bad:
            detail = ", ".join(f"{i} ({counts[i]})" for i in bad[:10])
            raise ValidationError(f"pool cardinality != K={expected_K} for {len(bad)} id(s): {detail}")
        ragged = False
    return AugmentPool(entries, expected_K, ragged)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def _input_field(x: Input) -> dict:
    return {"text": x} if isinstance(x, str) else {"features": list(x)}


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": {"num_classes": ds.num_classes, "split": ds.split}}) + "\n")
        for ex in ds.examples:
            fh.write(json.dumps({"id": ex.id, **_input_field(ex.input), "label": ex.label}) + "\n")


def save_pool(pool: AugmentPool, path, order: Sequence[str] | None = None) -> None:
    ids = list(order) if order is not None else list(pool.entries)
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id in ids:
            for k, x in enumerate(pool.entries.get(ex_id, ())):
                fh.write(json.dumps({"id": ex_id, "aug_index": k, **_input_field(x)}) + "\n")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """The example permutation for one epoch; a pure function of (seed, epoch)."""
    rng = np.random.default_rng([int(seed) % 2**63, int(epoch)])
    return rng.permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    order = epoch_order(n, seed, epoch)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(ds: Dataset, pool: AugmentPool | None, batch_size: int, epoch_seed: int,
               epoch: int = 0) -> Iterator[Batch]:
    for idx in batch_indices(len(ds), batch_size, epoch_seed, epoch):
        originals = [ds.examples[i] for i in idx]
        pools = [pool.entries[ex.id] for ex in originals] if pool is not None else []
        yield Batch(originals, pools)


def check_path(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    return p
